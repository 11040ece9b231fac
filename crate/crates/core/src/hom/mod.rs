//! Hierarchical occlusion head.
//!
//! A small convolutional head that predicts, per region of interest, a
//! visible mask, an amodal mask, an occlusion flag and a foreground logit.
//! The three mask/flag branches run in a configurable order; each branch
//! fuses the box feature, the large RoI feature and the features of every
//! earlier branch before its own convolution stack. Gradients are derived by
//! hand and checked against finite differences in the test suite.

mod ablation;
mod feature;
pub mod layers;
mod model;
mod params;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablation::{
    ablate_fusion, ablate_hierarchy, evaluate_head, overall_scores, split_by_scene, AblationReport, AblationRow,
    HeadScores,
};
pub use feature::{extract_roi_feature, roi_dataset, RoiFeature, RoiSample, RoiTargets, RAW_CHANNELS};
pub use model::{backward, forward, loss, HeadOutput, LossBreakdown, LossWeights};
pub use params::{read_params, write_params, HeadParams, LayerSlice};
pub use train::{train, train_from, TrainOutput, WINDOW};

/// Branches whose order the hierarchy controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Visible,
    Amodal,
    Occlusion,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Visible, Branch::Amodal, Branch::Occlusion];

    pub fn letter(self) -> char {
        match self {
            Branch::Visible => 'V',
            Branch::Amodal => 'A',
            Branch::Occlusion => 'O',
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Branch::Visible => "visible",
            Branch::Amodal => "amodal",
            Branch::Occlusion => "occlusion",
        }
    }
}

/// Prediction order of the three branches, e.g. `VAO`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hierarchy(pub [Branch; 3]);

impl Hierarchy {
    pub const VAO: Hierarchy = Hierarchy([Branch::Visible, Branch::Amodal, Branch::Occlusion]);
    pub const OAV: Hierarchy = Hierarchy([Branch::Occlusion, Branch::Amodal, Branch::Visible]);

    /// All six orders, lexicographic by letter string.
    pub fn all() -> Vec<Hierarchy> {
        let mut out = Vec::with_capacity(6);
        for a in Branch::ALL {
            for b in Branch::ALL {
                for c in Branch::ALL {
                    if a != b && b != c && a != c {
                        out.push(Hierarchy([a, b, c]));
                    }
                }
            }
        }
        out.sort_by_key(|h| h.to_string());
        out
    }

    /// Position of `b` in the order.
    pub fn position(&self, b: Branch) -> usize {
        self.0.iter().position(|&x| x == b).expect("hierarchy is a permutation")
    }
}

impl fmt::Display for Hierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{}", b.letter())?;
        }
        Ok(())
    }
}

impl FromStr for Hierarchy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s
            .chars()
            .filter(|c| !matches!(c, '-' | '>' | ' ' | ','))
            .map(|c| c.to_ascii_uppercase())
            .collect();
        let parse = |c: char| match c {
            'V' => Ok(Branch::Visible),
            'A' => Ok(Branch::Amodal),
            'O' => Ok(Branch::Occlusion),
            other => Err(Error::Config(format!("unknown branch letter `{other}` in hierarchy `{s}`"))),
        };
        if letters.len() != 3 {
            return Err(Error::Config(format!("hierarchy `{s}` must name three branches")));
        }
        let h = Hierarchy([parse(letters[0])?, parse(letters[1])?, parse(letters[2])?]);
        if h.0[0] == h.0[1] || h.0[1] == h.0[2] || h.0[0] == h.0[2] {
            return Err(Error::Config(format!("hierarchy `{s}` repeats a branch")));
        }
        Ok(h)
    }
}

impl Serialize for Hierarchy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Hierarchy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Uniform weight initialisation bound: `sqrt(6 / fan_in)` for `He`,
/// `sqrt(6 / (fan_in + fan_out))` for `Glorot`. Biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Glorot,
    #[default]
    He,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::He => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "glorot" => Ok(InitScheme::Glorot),
            "he" => Ok(InitScheme::He),
            _ => Err(Error::Config(format!("unknown init scheme {s:?} (expected glorot or he)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Feature channels Q.
    pub channels: usize,
    pub hierarchy: Hierarchy,
    pub fuse_box: bool,
    pub fuse_prior: bool,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
    /// Side of the small RoI feature (7). The large RoI feature and the box
    /// feature are twice this, the mask logits four times.
    pub roi_size: usize,
    /// Width of the two hidden layers in the foreground classifier.
    pub fc_hidden: usize,
    #[serde(default)]
    pub init: InitScheme,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            channels: 8,
            hierarchy: Hierarchy::VAO,
            fuse_box: true,
            fuse_prior: true,
            lr: 0.00125,
            iters: 5000,
            seed: 0,
            roi_size: 7,
            fc_hidden: 32,
            init: InitScheme::He,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::Config(format!("channels must be >= 2, got {}", self.channels)));
        }
        if self.roi_size < 1 || self.fc_hidden < 1 {
            return Err(Error::Config("roi_size and fc_hidden must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }

    pub fn large_size(&self) -> usize {
        2 * self.roi_size
    }

    pub fn mask_size(&self) -> usize {
        4 * self.roi_size
    }

    /// Input channels P of a branch's fusion stack.
    pub fn concat_channels(&self, b: Branch) -> usize {
        let q = self.channels;
        let prior = if self.fuse_prior { self.hierarchy.position(b) } else { 0 };
        q + if self.fuse_box { q } else { 0 } + prior * q
    }
}
