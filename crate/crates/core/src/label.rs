//! The three behavior classes, with a fixed class-index order used everywhere:
//! 0 = lying, 1 = sitting, 2 = standing.

use std::fmt;
use std::str::FromStr;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Behavior {
    Lying,
    Sitting,
    Standing,
}

impl Behavior {
    pub const ALL: [Behavior; NUM_CLASSES] = [Behavior::Lying, Behavior::Sitting, Behavior::Standing];

    pub fn class_index(self) -> usize {
        match self {
            Behavior::Lying => 0,
            Behavior::Sitting => 1,
            Behavior::Standing => 2,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Behavior> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Lying => "lying",
            Behavior::Sitting => "sitting",
            Behavior::Standing => "standing",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lying" => Ok(Behavior::Lying),
            "sitting" => Ok(Behavior::Sitting),
            "standing" => Ok(Behavior::Standing),
            other => Err(format!("unknown behavior '{other}'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_order_is_alphabetical() {
        assert_eq!(Behavior::Lying.class_index(), 0);
        assert_eq!(Behavior::Sitting.class_index(), 1);
        assert_eq!(Behavior::Standing.class_index(), 2);
        for b in Behavior::ALL {
            assert_eq!(Behavior::from_class_index(b.class_index()), Some(b));
        }
    }

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("Sitting".parse::<Behavior>().unwrap(), Behavior::Sitting);
        assert_eq!(" LYING ".parse::<Behavior>().unwrap(), Behavior::Lying);
        assert!("rolling".parse::<Behavior>().is_err());
    }
}
