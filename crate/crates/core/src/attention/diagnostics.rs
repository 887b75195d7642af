use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{AttentionWeights, TokenPos};

/// Frame-level summary of an attention weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDiagnostics {
    /// `q_frames x k_frames`, mean weight between the two frame blocks.
    pub temporal: Vec<Vec<f64>>,
    /// Query row whose weights fill `spatial`.
    pub probe: usize,
    /// Per key frame, an `h x w` grid of the probe's weights, indexed `[y][x]`.
    pub spatial: Vec<Vec<Vec<f64>>>,
}

fn frame_count(positions: &[TokenPos]) -> usize {
    positions.iter().map(|p| p.frame as usize + 1).max().unwrap_or(0)
}

/// Averages `weights` over query/key frame blocks and extracts the per-frame
/// spatial weights of query row `probe`. Keys sharing a position add up.
pub fn attention_diagnostics(
    weights: &AttentionWeights,
    q_positions: &[TokenPos],
    k_positions: &[TokenPos],
    probe: usize,
) -> Result<AttentionDiagnostics> {
    if q_positions.len() != weights.rows || k_positions.len() != weights.cols {
        return Err(Error::Shape(format!(
            "partition of {} queries and {} keys for {}x{} weights",
            q_positions.len(),
            k_positions.len(),
            weights.rows,
            weights.cols
        )));
    }
    if probe >= weights.rows {
        return Err(Error::Index(format!("probe row {probe} of {}", weights.rows)));
    }
    let fq = frame_count(q_positions);
    let fk = frame_count(k_positions);
    let mut sum = vec![vec![0.0; fk]; fq];
    let mut q_count = vec![0usize; fq];
    let mut k_count = vec![0usize; fk];
    for p in q_positions {
        q_count[p.frame as usize] += 1;
    }
    for p in k_positions {
        k_count[p.frame as usize] += 1;
    }
    for (i, qp) in q_positions.iter().enumerate() {
        for (kp, &w) in k_positions.iter().zip(weights.row(i)) {
            sum[qp.frame as usize][kp.frame as usize] += w;
        }
    }
    let temporal = sum
        .into_iter()
        .enumerate()
        .map(|(a, row)| {
            row.into_iter()
                .enumerate()
                .map(|(b, s)| {
                    let cells = q_count[a] * k_count[b];
                    if cells == 0 {
                        0.0
                    } else {
                        s / cells as f64
                    }
                })
                .collect()
        })
        .collect();

    let mut extent = vec![(0usize, 0usize); fk];
    for p in k_positions {
        let e = &mut extent[p.frame as usize];
        e.0 = e.0.max(p.y as usize + 1);
        e.1 = e.1.max(p.x as usize + 1);
    }
    let mut spatial: Vec<Vec<Vec<f64>>> = extent.iter().map(|&(h, w)| vec![vec![0.0; w]; h]).collect();
    for (p, &w) in k_positions.iter().zip(weights.row(probe)) {
        spatial[p.frame as usize][p.y as usize][p.x as usize] += w;
    }
    Ok(AttentionDiagnostics {
        temporal,
        probe,
        spatial,
    })
}

impl AttentionDiagnostics {
    /// `q_frame,k_frame,weight` rows.
    pub fn temporal_csv(&self) -> String {
        let mut s = String::from("q_frame,k_frame,weight\n");
        for (a, row) in self.temporal.iter().enumerate() {
            for (b, w) in row.iter().enumerate() {
                writeln!(s, "{a},{b},{w:e}").unwrap();
            }
        }
        s
    }

    /// `k_frame,y,x,weight` rows for the probe query.
    pub fn spatial_csv(&self) -> String {
        let mut s = String::from("k_frame,y,x,weight\n");
        for (f, grid) in self.spatial.iter().enumerate() {
            for (y, row) in grid.iter().enumerate() {
                for (x, w) in row.iter().enumerate() {
                    writeln!(s, "{f},{y},{x},{w:e}").unwrap();
                }
            }
        }
        s
    }

    pub fn write_csv(&self, temporal: &Path, spatial: &Path) -> Result<()> {
        std::fs::write(temporal, self.temporal_csv()).map_err(|e| Error::io(temporal, e))?;
        std::fs::write(spatial, self.spatial_csv()).map_err(|e| Error::io(spatial, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_positions(frames: usize, h: usize, w: usize) -> Vec<TokenPos> {
        (0..frames)
            .flat_map(|f| (0..h).flat_map(move |y| (0..w).map(move |x| TokenPos::new(f, y, x))))
            .collect()
    }

    #[test]
    fn uniform_weights_give_constant_matrix() {
        let pos = grid_positions(3, 2, 2);
        let n = pos.len();
        let w = AttentionWeights {
            rows: n,
            cols: n,
            data: vec![1.0 / n as f64; n * n],
        };
        let d = attention_diagnostics(&w, &pos, &pos, 0).unwrap();
        for row in &d.temporal {
            for &v in row {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            }
        }
        assert_eq!(d.spatial.len(), 3);
        assert_eq!(d.spatial[2].len(), 2);
    }

    #[test]
    fn block_diagonal_weights() {
        let pos = grid_positions(2, 1, 2);
        let data = vec![
            0.5, 0.5, 0.0, 0.0, //
            0.5, 0.5, 0.0, 0.0, //
            0.0, 0.0, 0.5, 0.5, //
            0.0, 0.0, 0.5, 0.5,
        ];
        let w = AttentionWeights { rows: 4, cols: 4, data };
        let d = attention_diagnostics(&w, &pos, &pos, 2).unwrap();
        assert_eq!(d.temporal, vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        assert_eq!(d.spatial[1], vec![vec![0.5, 0.5]]);
        assert!(d.temporal_csv().starts_with("q_frame,k_frame,weight\n0,0,"));
        assert_eq!(d.spatial_csv().lines().count(), 5);
    }

    #[test]
    fn partition_mismatch() {
        let pos = grid_positions(1, 1, 2);
        let w = AttentionWeights {
            rows: 3,
            cols: 2,
            data: vec![0.5; 6],
        };
        assert!(matches!(attention_diagnostics(&w, &pos, &pos, 0), Err(Error::Shape(_))));
    }
}
