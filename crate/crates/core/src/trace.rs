//! Line-per-event scheduler trace.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::ids::{ClassId, StringId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Spawn,
    Dispatch,
    Preempt,
    Yield,
    ContinuationYield,
    Block,
    Wake,
    Acquire,
    Release,
    Deadlock,
    Rollback,
    Finish,
    Fail,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Spawn => "spawn",
            Event::Dispatch => "dispatch",
            Event::Preempt => "preempt",
            Event::Yield => "yield",
            Event::ContinuationYield => "continuation-yield",
            Event::Block => "block",
            Event::Wake => "wake",
            Event::Acquire => "acquire",
            Event::Release => "release",
            Event::Deadlock => "deadlock",
            Event::Rollback => "rollback",
            Event::Finish => "finish",
            Event::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceLine {
    pub step: u64,
    pub event: Event,
    pub string: StringId,
    pub class: Option<ClassId>,
    pub reason: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} event={} string={} class=", self.step, self.event.as_str(), self.string)?;
        match self.class {
            Some(c) => write!(f, "{c}")?,
            None => f.write_str("-")?,
        }
        write!(f, " reason={}", self.reason)
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    enabled: bool,
    lines: Vec<TraceLine>,
}

impl Default for Trace {
    fn default() -> Self {
        Trace {
            enabled: true,
            lines: Vec::new(),
        }
    }
}

impl Trace {
    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub(crate) fn push(
        &mut self,
        step: u64,
        event: Event,
        string: StringId,
        class: Option<ClassId>,
        reason: &str,
    ) {
        if self.enabled {
            self.lines.push(TraceLine {
                step,
                event,
                string,
                class,
                reason: reason.into(),
            });
        }
    }

    pub fn lines(&self) -> &[TraceLine] {
        &self.lines
    }

    pub fn take(&mut self) -> Vec<TraceLine> {
        core::mem::take(&mut self.lines)
    }
}
