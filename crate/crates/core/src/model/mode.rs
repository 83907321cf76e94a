use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// High-level behaviour command issued alongside each observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    GoForward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    TakeElevator = 3,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::GoForward, Mode::TurnLeft, Mode::TurnRight, Mode::TakeElevator];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Mode> {
        Mode::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Data(format!("unknown mode value {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::GoForward => "go-forward",
            Mode::TurnLeft => "turn-left",
            Mode::TurnRight => "turn-right",
            Mode::TakeElevator => "take-elevator",
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown mode {s:?}")))
    }
}

/// Steering rate (rad/s, positive turns left) and forward speed (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub steering: f64,
    pub velocity: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        steering: 0.0,
        velocity: 0.0,
    };

    pub fn new(steering: f64, velocity: f64) -> Self {
        Action { steering, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.steering.is_finite() && self.velocity.is_finite()
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.steering, self.velocity]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_is_stable() {
        for (i, m) in Mode::ALL.iter().enumerate() {
            assert_eq!(m.index(), i);
            assert_eq!(Mode::from_index(i).unwrap(), *m);
            assert_eq!(m.name().parse::<Mode>().unwrap(), *m);
        }
        assert!(Mode::from_index(4).is_err());
        assert!("sideways".parse::<Mode>().is_err());
        assert_eq!(Mode::TurnRight.one_hot(), [0.0, 0.0, 1.0, 0.0]);
    }
}
