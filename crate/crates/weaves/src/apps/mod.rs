pub mod pde;
pub mod quad;
pub mod ode;
pub mod delay;
