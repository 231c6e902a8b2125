//! Class names and display colours.

use crate::error::{Error, Result};

/// SemanticKITTI's 19 evaluated classes, in training-id order.
pub const KITTI_CLASSES: [(&str, [u8; 3]); 19] = [
    ("car", [100, 150, 245]),
    ("bicycle", [100, 230, 245]),
    ("motorcycle", [30, 60, 150]),
    ("truck", [80, 30, 180]),
    ("other-vehicle", [0, 0, 255]),
    ("person", [255, 30, 30]),
    ("bicyclist", [255, 40, 200]),
    ("motorcyclist", [150, 30, 90]),
    ("road", [255, 0, 255]),
    ("parking", [255, 150, 255]),
    ("sidewalk", [75, 0, 75]),
    ("other-ground", [175, 0, 75]),
    ("building", [255, 200, 0]),
    ("fence", [255, 120, 50]),
    ("vegetation", [0, 175, 0]),
    ("trunk", [135, 60, 0]),
    ("terrain", [150, 240, 80]),
    ("pole", [255, 240, 150]),
    ("traffic-sign", [255, 0, 0]),
];

/// Classes used by generated scenes.
pub const SYNTH_CLASSES: [&str; 6] = ["road", "sidewalk", "car", "building", "pole", "vegetation"];

pub const SYNTH_ROAD: usize = 0;
pub const SYNTH_SIDEWALK: usize = 1;
pub const SYNTH_CAR: usize = 2;
pub const SYNTH_BUILDING: usize = 3;
pub const SYNTH_POLE: usize = 4;
pub const SYNTH_VEGETATION: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMap {
    names: Vec<String>,
    colors: Vec<[u8; 3]>,
}

impl ColorMap {
    pub fn new(names: Vec<String>, colors: Vec<[u8; 3]>) -> Result<Self> {
        Error::check_len("colour map", names.len(), colors.len())?;
        if names.is_empty() {
            return Err(Error::invalid("colour map needs at least one class"));
        }
        Ok(ColorMap { names, colors })
    }

    pub fn kitti() -> Self {
        ColorMap {
            names: KITTI_CLASSES.iter().map(|(n, _)| n.to_string()).collect(),
            colors: KITTI_CLASSES.iter().map(|(_, c)| *c).collect(),
        }
    }

    /// Generated-scene classes, coloured like their KITTI namesakes.
    pub fn synthetic() -> Self {
        let colors = SYNTH_CLASSES
            .iter()
            .map(|n| KITTI_CLASSES.iter().find(|(k, _)| k == n).unwrap().1)
            .collect();
        ColorMap {
            names: SYNTH_CLASSES.iter().map(|n| n.to_string()).collect(),
            colors,
        }
    }

    /// The named map matching `class_count`, or distinct grey levels otherwise.
    pub fn for_class_count(class_count: usize) -> Self {
        match class_count {
            19 => Self::kitti(),
            6 => Self::synthetic(),
            n => ColorMap {
                names: (0..n).map(|c| format!("class-{c}")).collect(),
                colors: (0..n)
                    .map(|c| {
                        let v = (c * 255 / n.max(2).saturating_sub(1).max(1)).min(255) as u8;
                        [v, v, v]
                    })
                    .collect(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn color(&self, class: usize) -> [u8; 3] {
        self.colors[class]
    }

    /// Lowest class id drawn in `rgb`, if any.
    pub fn class_of(&self, rgb: [u8; 3]) -> Option<usize> {
        self.colors.iter().position(|&c| c == rgb)
    }
}
