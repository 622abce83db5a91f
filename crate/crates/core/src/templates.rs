//! Built-in robot templates shipped with the crate.

use crate::kv::ParseError;
use crate::morphology::{parse_morphology, Morphology};

pub const NAMES: [&str; 6] = ["quadruped_a", "quadruped_b", "biped_a", "biped_b", "hexapod", "humanoid"];

pub fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "quadruped_a" => include_str!("../templates/quadruped_a.morph"),
        "quadruped_b" => include_str!("../templates/quadruped_b.morph"),
        "biped_a" => include_str!("../templates/biped_a.morph"),
        "biped_b" => include_str!("../templates/biped_b.morph"),
        "hexapod" => include_str!("../templates/hexapod.morph"),
        "humanoid" => include_str!("../templates/humanoid.morph"),
        _ => return None,
    })
}

/// Parses a built-in template. Panics on an unknown name.
pub fn load(name: &str) -> Result<Morphology, ParseError> {
    parse_morphology(text(name).unwrap_or_else(|| panic!("unknown template `{name}`")))
}

pub fn all() -> Vec<Morphology> {
    NAMES.iter().map(|n| load(n).expect("built-in templates are valid")).collect()
}
