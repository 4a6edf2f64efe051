//! Sparse correspondences: the [`MatchSet`] container, the [`FeatureMatcher`]
//! interface and the default Harris + NCC implementation.

mod harris;
mod matcher;

pub use harris::{detect_corners, harris_response, Corner, HarrisParams};
pub use matcher::{detect_and_match, MatcherParams};

use nalgebra::Point2;
use thiserror::Error;

use crate::raster::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("image too small for matching ({width}x{height}, need at least 64x64)")]
    ImageTooSmall { width: usize, height: usize },
    #[error("insufficient matches: found {found}, need {required}")]
    InsufficientMatches { found: usize, required: usize },
}

/// One correspondence between image A and image B, sub-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: Point2<f64>,
    pub b: Point2<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    /// Set by robust estimators downstream; one flag per match.
    pub inliers: Option<Vec<bool>>,
}

impl MatchSet {
    pub fn new(matches: Vec<Match>) -> Self {
        Self { matches, inliers: None }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// The same correspondences with A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            matches: self
                .matches
                .iter()
                .map(|m| Match {
                    a: m.b,
                    b: m.a,
                    score: m.score,
                })
                .collect(),
            inliers: self.inliers.clone(),
        }
    }

    /// Matches flagged as inliers, or all matches when no flags are set.
    pub fn inlier_matches(&self) -> Vec<Match> {
        match &self.inliers {
            Some(flags) => self
                .matches
                .iter()
                .zip(flags)
                .filter(|(_, &ok)| ok)
                .map(|(m, _)| *m)
                .collect(),
            None => self.matches.clone(),
        }
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers
            .as_ref()
            .map_or(self.matches.len(), |f| f.iter().filter(|&&v| v).count())
    }
}

/// Anything that can produce correspondences between two images.
pub trait FeatureMatcher: Sync {
    fn match_images(&self, a: &GrayImage, b: &GrayImage) -> Result<MatchSet, FeatureError>;
}

/// The default detector and matcher.
#[derive(Debug, Clone, Copy, Default)]
pub struct HarrisNccMatcher {
    pub params: MatcherParams,
}

impl FeatureMatcher for HarrisNccMatcher {
    fn match_images(&self, a: &GrayImage, b: &GrayImage) -> Result<MatchSet, FeatureError> {
        detect_and_match(a, b, &self.params)
    }
}

/// Pre-computed correspondences, e.g. injected ground truth.
#[derive(Debug, Clone)]
pub struct FixedMatches(pub MatchSet);

impl FeatureMatcher for FixedMatches {
    fn match_images(&self, _: &GrayImage, _: &GrayImage) -> Result<MatchSet, FeatureError> {
        Ok(self.0.clone())
    }
}
