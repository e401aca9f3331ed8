//! Analytic AU rig: each AU moves a handful of anchors, and every primitive
//! follows the anchors of its region with a Gaussian falloff in `xy`.

use crate::cmdm::{au_slot, AU_IDS, LOWER_IDS};

/// Number of tracked landmarks.
pub const LANDMARKS: usize = 20;
/// Primitives with canonical `y` below this belong to the lower face.
pub const REGION_SPLIT_Y: f64 = 0.05;
/// World displacement per unit intensity of an upper / lower AU.
pub const UPPER_UNIT: f64 = 0.03;
pub const LOWER_UNIT: f64 = 0.04;

/// Landmark anchors in canonical `xy`: 4 brow, 4 eye, 8 lip, 4 jaw.
pub const ANCHORS: [[f64; 2]; LANDMARKS] = [
    [-0.12, 0.30],  // 0 inner brow L
    [0.12, 0.30],   // 1 inner brow R
    [-0.33, 0.32],  // 2 outer brow L
    [0.33, 0.32],   // 3 outer brow R
    [-0.22, 0.20],  // 4 upper lid L
    [0.22, 0.20],   // 5 upper lid R
    [-0.22, 0.12],  // 6 lower lid L
    [0.22, 0.12],   // 7 lower lid R
    [-0.16, -0.30], // 8 lip corner L
    [0.16, -0.30],  // 9 lip corner R
    [0.0, -0.26],   // 10 upper lip mid
    [0.0, -0.345],  // 11 lower lip mid
    [-0.08, -0.265], // 12 upper lip side L
    [0.08, -0.265], // 13 upper lip side R
    [-0.08, -0.34], // 14 lower lip side L
    [0.08, -0.34],  // 15 lower lip side R
    [0.0, -0.62],   // 16 chin
    [-0.40, -0.42], // 17 jaw L
    [0.40, -0.42],  // 18 jaw R
    [0.0, -0.46],   // 19 mentolabial fold
];

/// Falloff radius of each anchor.
pub const RADII: [f64; LANDMARKS] = [
    0.08, 0.08, 0.08, 0.08, // brows
    0.04, 0.04, 0.04, 0.04, // lids
    0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, // lips
    0.12, 0.15, 0.15, 0.08, // chin, jaw, mentolabial
];

const INNER_BROWS: &[usize] = &[0, 1];
const OUTER_BROWS: &[usize] = &[2, 3];
const UPPER_LIDS: &[usize] = &[4, 5];
const LOWER_LIDS: &[usize] = &[6, 7];
const CORNERS: &[usize] = &[8, 9];
const UPPER_MID: &[usize] = &[10];
const LOWER_MID: &[usize] = &[11];
const UPPER_SIDE: &[usize] = &[12, 13];
const LOWER_SIDE: &[usize] = &[14, 15];
const CHIN: &[usize] = &[16];
const JAW: &[usize] = &[17, 18];
const MENTOLABIAL: &[usize] = &[19];

/// `(anchors, lateral, vertical)`: lateral is signed away from the midline.
type Move = (&'static [usize], f64, f64);

fn moves(au: u8) -> &'static [Move] {
    match au {
        1 => &[(INNER_BROWS, 0.0, 1.0)],
        2 => &[(OUTER_BROWS, 0.0, 1.0)],
        4 => &[(INNER_BROWS, -0.5, -1.0), (OUTER_BROWS, -0.3, -0.5)],
        5 => &[(UPPER_LIDS, 0.4, 1.0)],
        6 => &[(LOWER_LIDS, 0.5, 0.8)],
        7 => &[(LOWER_LIDS, -0.4, 0.6), (UPPER_LIDS, -0.3, -0.2)],
        45 => &[(UPPER_LIDS, 0.0, -1.0), (LOWER_LIDS, -0.6, 0.2)],
        9 => &[(UPPER_SIDE, 0.7, 0.3), (UPPER_MID, 0.0, 0.6), (CORNERS, -0.3, 0.0)],
        10 => &[(UPPER_MID, 0.0, 1.0), (UPPER_SIDE, 0.0, 0.9)],
        12 => &[(CORNERS, 0.6, 0.8), (UPPER_SIDE, 0.5, 0.5)],
        14 => &[(CORNERS, -0.7, 0.2), (LOWER_SIDE, -0.5, 0.4)],
        15 => &[(CORNERS, 0.0, -1.0), (LOWER_SIDE, 0.4, -0.7)],
        17 => &[(MENTOLABIAL, 0.0, 1.0), (LOWER_MID, 0.0, 0.5), (CHIN, 0.0, 0.4)],
        20 => &[(CORNERS, 1.0, -0.3), (LOWER_SIDE, 0.3, 0.0), (JAW, 0.4, 0.0)],
        23 => &[
            (UPPER_MID, 0.0, -0.4),
            (LOWER_MID, 0.0, 0.4),
            (UPPER_SIDE, -0.6, 0.0),
            (LOWER_SIDE, -0.6, 0.0),
        ],
        25 => &[
            (UPPER_MID, 0.0, 0.5),
            (UPPER_SIDE, 0.0, 0.4),
            (LOWER_MID, 0.0, -1.0),
            (LOWER_SIDE, 0.0, -0.8),
            (CHIN, 0.0, -0.4),
        ],
        26 => &[
            (CHIN, 0.0, -1.5),
            (MENTOLABIAL, 0.0, -1.3),
            (LOWER_MID, 0.0, -1.0),
            (LOWER_SIDE, 0.0, -0.9),
            (JAW, 0.0, -0.6),
        ],
        _ => &[],
    }
}

/// Per-AU anchor displacement table, `basis[slot][anchor] = (dx, dy)` in world
/// units per unit intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    basis: Vec<[[f64; 2]; LANDMARKS]>,
}

impl Default for Rig {
    fn default() -> Self {
        Self::new()
    }
}

impl Rig {
    pub fn new() -> Self {
        let basis = AU_IDS
            .iter()
            .map(|&id| {
                let unit = if LOWER_IDS.contains(&id) { LOWER_UNIT } else { UPPER_UNIT };
                let mut b = [[0.0; 2]; LANDMARKS];
                for &(anchors, lateral, vertical) in moves(id) {
                    for &a in anchors {
                        let side = if ANCHORS[a][0] == 0.0 { 0.0 } else { ANCHORS[a][0].signum() };
                        b[a][0] += unit * lateral * side;
                        b[a][1] += unit * vertical;
                    }
                }
                b
            })
            .collect();
        Self { basis }
    }

    fn is_lower(slot: usize) -> bool {
        LOWER_IDS.contains(&AU_IDS[slot])
    }

    /// Displacement (`xy`, world units) of a primitive at canonical `xy` for
    /// one AU vector. Upper AUs only move primitives with `y >=
    /// REGION_SPLIT_Y`, lower AUs only those below.
    pub fn displacement(&self, xy: [f64; 2], au: &[f64]) -> [f64; 2] {
        let lower_region = xy[1] < REGION_SPLIT_Y;
        let weights: [f64; LANDMARKS] = std::array::from_fn(|a| {
            let dx = xy[0] - ANCHORS[a][0];
            let dy = xy[1] - ANCHORS[a][1];
            (-(dx * dx + dy * dy) / (2.0 * RADII[a] * RADII[a])).exp()
        });
        let mut d = [0.0; 2];
        for (slot, b) in self.basis.iter().enumerate() {
            if Self::is_lower(slot) != lower_region || au[slot] == 0.0 {
                continue;
            }
            for a in 0..LANDMARKS {
                if b[a] == [0.0, 0.0] {
                    continue;
                }
                d[0] += au[slot] * weights[a] * b[a][0];
                d[1] += au[slot] * weights[a] * b[a][1];
            }
        }
        d
    }

    /// Anchor displacement table of one AU.
    pub fn anchor_moves(&self, id: u8) -> Option<&[[f64; 2]; LANDMARKS]> {
        au_slot(id).map(|k| &self.basis[k])
    }
}
