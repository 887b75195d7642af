use serde::{Deserialize, Serialize};

use crate::attention::TokenPos;
use crate::decomposition::sample_indices;
use crate::error::{Error, Result};

/// Which frames receive a stylized reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferencePolicy {
    FirstOnly,
    FirstMidLast,
    AllSampled,
}

/// Reference frames and the latent maps whose positions their tokens reuse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceArrangement {
    frames: Vec<usize>,
    maps: Vec<usize>,
}

impl ReferenceArrangement {
    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    /// Latent map of each reference frame.
    pub fn maps(&self) -> &[usize] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Token positions of reference `k` on a `th x tw` token grid: the
    /// positions of its latent map, row-major.
    pub fn positions(&self, k: usize, th: usize, tw: usize) -> Vec<TokenPos> {
        let map = self.maps[k];
        (0..th)
            .flat_map(|y| (0..tw).map(move |x| TokenPos::new(map, y, x)))
            .collect()
    }
}

fn nearest(sampled: &[usize], target: usize) -> usize {
    // ties go to the earlier frame
    *sampled
        .iter()
        .min_by_key(|&&f| f.abs_diff(target))
        .expect("sampled sequence is never empty")
}

/// Reference frames for a `frames`-frame video under temporal factor `r` and
/// offset `offset`, snapped onto the sampled sequence.
pub fn arrange_references(frames: usize, r: usize, offset: usize, policy: ReferencePolicy) -> Result<ReferenceArrangement> {
    let sampled = sample_indices(frames, r, offset)?;
    let s = sampled.indices();
    let chosen: Vec<usize> = match policy {
        ReferencePolicy::FirstOnly => vec![0],
        ReferencePolicy::AllSampled => s.to_vec(),
        ReferencePolicy::FirstMidLast => {
            if s.len() < 3 {
                return Err(Error::Config(format!(
                    "first-mid-last needs 3 sampled frames, {frames} frames give {:?}",
                    s
                )));
            }
            let picks = vec![0, nearest(s, (frames - 1) / 2), nearest(s, frames - 1)];
            if picks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "first, middle and last frames collapse onto {picks:?} in {s:?}"
                )));
            }
            picks
        }
    };
    let maps = chosen
        .iter()
        .map(|f| s.iter().position(|x| x == f).expect("chosen from the sampled sequence"))
        .collect();
    Ok(ReferenceArrangement { frames: chosen, maps })
}
