//! Bundled single-phase equivalent of the 13-node test feeder.
//!
//! Node numbering (user labels): 0 substation, 1 regulator output, 2 head
//! node, 3 transformer secondary, 4 and 6 lateral junctions, 5, 7, 8, 10 and
//! 11 lateral ends, 9 the main load centre, 12 the switchgear junction.
//! Base 5 MVA, 4.16 kV.

use crate::feeder::{load_feeder, FeederModel};
use crate::opf::{LoadRecord, ScenarioFile};

pub const FEEDER13_JSON: &str = include_str!("../../../data/feeder13.json");

/// Leaf nodes of the bundled feeder.
pub const FEEDER13_LEAVES: [usize; 6] = [3, 5, 7, 8, 10, 11];

/// Nominal spot loads `(node, p, q)` in pu, shunt capacitors netted in.
pub const FEEDER13_LOADS: [(usize, f64, f64); 8] = [
    (2, 0.02, 0.0116),
    (3, 0.08, 0.058),
    (5, 0.046, 0.0264),
    (6, 0.034, 0.025),
    (8, 0.1686, -0.0276),
    (9, 0.285, 0.1738),
    (10, 0.034, -0.004),
    (11, 0.0256, 0.0172),
];

/// The bundled feeder, already ordered.
pub fn feeder13() -> FeederModel {
    load_feeder(FEEDER13_JSON.as_bytes())
        .expect("bundled feeder is valid")
        .order_radial()
}

/// Scenario with the nominal loads scaled by `scale` and no units.
pub fn feeder13_loads(scale: f64) -> ScenarioFile {
    ScenarioFile {
        loads: FEEDER13_LOADS
            .iter()
            .map(|&(node, p, q)| LoadRecord { node, p_pu: p * scale, q_pu: q * scale })
            .collect(),
        ..ScenarioFile::default()
    }
}
