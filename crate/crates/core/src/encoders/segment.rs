use std::collections::BTreeSet;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{validate_image, RegionSegmenter};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Skin,
    Hair,
    Eyes,
    Nose,
    Mouth,
    Ears,
    Background,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 7] = [
        RegionLabel::Skin,
        RegionLabel::Hair,
        RegionLabel::Eyes,
        RegionLabel::Nose,
        RegionLabel::Mouth,
        RegionLabel::Ears,
        RegionLabel::Background,
    ];

    /// Vocabulary matched against prompts.
    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            RegionLabel::Skin => &["skin", "face", "complexion", "cheeks", "forehead", "wrinkles"],
            RegionLabel::Hair => &["hair", "hairstyle", "haircut", "bangs", "curly hair"],
            RegionLabel::Eyes => &["eyes", "eyebrows", "glasses", "eyelashes"],
            RegionLabel::Nose => &["nose", "nostrils"],
            RegionLabel::Mouth => &["mouth", "lips", "smile", "teeth", "beard", "mustache"],
            RegionLabel::Ears => &["ears", "earrings"],
            RegionLabel::Background => &["background", "scenery", "backdrop"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<RegionLabel>,
}

impl SegmentationMap {
    /// Pixels whose label is *not* in `relevant`.
    pub fn mask_excluding(&self, relevant: &BTreeSet<RegionLabel>) -> Vec<bool> {
        self.labels.iter().map(|l| !relevant.contains(l)).collect()
    }

    pub fn count(&self, label: RegionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Labels pixels from a fixed frontal face layout in normalised image
/// coordinates. Depends only on the image size.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSegmenter;

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let du = (u - cu) / ru;
    let dv = (v - cv) / rv;
    du * du + dv * dv <= 1.0
}

impl TemplateSegmenter {
    pub fn label_at(u: f64, v: f64) -> RegionLabel {
        let head = in_ellipse(u, v, 0.0, 0.0, 0.75, 0.9);
        if head {
            if in_ellipse(u.abs(), v, 0.31, 0.14, 0.12, 0.08) {
                RegionLabel::Eyes
            } else if in_ellipse(u, v, 0.0, -0.08, 0.09, 0.16) {
                RegionLabel::Nose
            } else if in_ellipse(u, v, 0.0, -0.44, 0.25, 0.08) {
                RegionLabel::Mouth
            } else if v > 0.45 {
                RegionLabel::Hair
            } else {
                RegionLabel::Skin
            }
        } else if in_ellipse(u.abs(), v, 0.8, 0.0, 0.1, 0.2) {
            RegionLabel::Ears
        } else {
            RegionLabel::Background
        }
    }

    pub fn layout(height: usize, width: usize) -> SegmentationMap {
        let mut labels = Vec::with_capacity(height * width);
        for row in 0..height {
            let v = 1.0 - (row as f64 + 0.5) / height as f64 * 2.0;
            for col in 0..width {
                let u = (col as f64 + 0.5) / width as f64 * 2.0 - 1.0;
                labels.push(Self::label_at(u, v));
            }
        }
        SegmentationMap {
            height,
            width,
            labels,
        }
    }
}

impl RegionSegmenter for TemplateSegmenter {
    fn segment(&self, image: &Tensor) -> Result<SegmentationMap> {
        validate_image(image)?;
        let (_, h, w) = image.dims3()?;
        Ok(Self::layout(h, w))
    }
}
