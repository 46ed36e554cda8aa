use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Transferable (`T`) or non-transferable (`NT`). Class index 0 is `T`, 1 is `NT`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    T,
    NT,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::T, Label::NT];

    pub fn index(self) -> usize {
        match self {
            Label::T => 0,
            Label::NT => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::T),
            1 => Some(Label::NT),
            _ => None,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::T => Label::NT,
            Label::NT => Label::T,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::T => "T",
            Label::NT => "NT",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "T" => Ok(Label::T),
            "NT" => Ok(Label::NT),
            other => Err(Error::Input(format!("unknown label {other:?} (expected T or NT)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for l in Label::ALL {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
        assert!("X".parse::<Label>().is_err());
    }
}
