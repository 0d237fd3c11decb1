use crate::error::{Error, Result};

/// Split a `total_bits` address into a `vm_bits` per-node offset and a node
/// number: returns (bytes per node, maximum node count).
pub fn partition_address_space(total_bits: u32, vm_bits: u32) -> Result<(u64, u64)> {
    if vm_bits == 0 || vm_bits >= total_bits || total_bits > 64 {
        return Err(Error::InvalidSplit {
            total_bits,
            vm_bits,
        });
    }
    Ok((1u64 << vm_bits, 1u64 << (total_bits - vm_bits)))
}
