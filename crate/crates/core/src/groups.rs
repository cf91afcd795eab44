//! Coarse / medium / fine partition of the editable layers and the edit
//! level each group answers to.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerGroup {
    Coarse,
    Medium,
    Fine,
}

/// Kind of manipulation a prompt asks for. Each level is served by exactly
/// one layer group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Shape,
    Attribute,
    Style,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Shape, Level::Attribute, Level::Style];

    pub fn group(self) -> LayerGroup {
        match self {
            Level::Shape => LayerGroup::Coarse,
            Level::Attribute => LayerGroup::Medium,
            Level::Style => LayerGroup::Fine,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Shape => "shape",
            Level::Attribute => "attribute",
            Level::Style => "style",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shape" => Ok(Level::Shape),
            "attribute" => Ok(Level::Attribute),
            "style" => Ok(Level::Style),
            other => Err(invalid(format!("unknown level `{other}` (shape|attribute|style)"))),
        }
    }
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 3] = [LayerGroup::Coarse, LayerGroup::Medium, LayerGroup::Fine];

    pub fn level(self) -> Level {
        match self {
            LayerGroup::Coarse => Level::Shape,
            LayerGroup::Medium => Level::Attribute,
            LayerGroup::Fine => Level::Style,
        }
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerGroup::Coarse => "coarse",
            LayerGroup::Medium => "medium",
            LayerGroup::Fine => "fine",
        })
    }
}

/// 1-based layer indices per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupAssignment {
    pub coarse: Vec<usize>,
    pub medium: Vec<usize>,
    pub fine: Vec<usize>,
}

impl Default for GroupAssignment {
    fn default() -> Self {
        Self::even_split(9).expect("nine layers split evenly")
    }
}

impl GroupAssignment {
    /// Contiguous thirds; the remainder goes to the fine group.
    pub fn even_split(n_layers: usize) -> Result<Self> {
        if n_layers < 3 {
            return Err(invalid("need at least three editable layers to form three groups"));
        }
        let third = n_layers / 3;
        Ok(Self {
            coarse: (1..=third).collect(),
            medium: (third + 1..=2 * third).collect(),
            fine: (2 * third + 1..=n_layers).collect(),
        })
    }

    pub fn layers(&self, group: LayerGroup) -> &[usize] {
        match group {
            LayerGroup::Coarse => &self.coarse,
            LayerGroup::Medium => &self.medium,
            LayerGroup::Fine => &self.fine,
        }
    }

    pub fn group_of(&self, index: usize) -> Option<LayerGroup> {
        LayerGroup::ALL
            .into_iter()
            .find(|g| self.layers(*g).contains(&index))
    }

    /// Disjoint groups whose union is exactly `1..=n_layers`.
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let mut seen = vec![false; n_layers];
        for g in LayerGroup::ALL {
            for &i in self.layers(g) {
                if i == 0 || i > n_layers {
                    return Err(invalid(format!("layer index {i} outside 1..={n_layers}")));
                }
                if std::mem::replace(&mut seen[i - 1], true) {
                    return Err(invalid(format!("layer {i} assigned to more than one group")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("layer {} not assigned to any group", missing + 1)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_is_three_three_three() {
        let g = GroupAssignment::default();
        assert_eq!(g.coarse, vec![1, 2, 3]);
        assert_eq!(g.medium, vec![4, 5, 6]);
        assert_eq!(g.fine, vec![7, 8, 9]);
        g.validate(9).unwrap();
        assert_eq!(g.group_of(5), Some(LayerGroup::Medium));
    }

    #[test]
    fn overlapping_or_partial_assignments_are_rejected() {
        let mut g = GroupAssignment::default();
        g.fine.push(3);
        assert!(g.validate(9).is_err());
        let mut g = GroupAssignment::default();
        g.fine.pop();
        assert!(g.validate(9).is_err());
    }

    #[test]
    fn levels_map_one_to_one_onto_groups() {
        for level in Level::ALL {
            assert_eq!(level.group().level(), level);
        }
        assert_eq!("Style".parse::<Level>().unwrap(), Level::Style);
    }
}
