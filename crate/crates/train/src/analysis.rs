//! Attention heatmaps and audio-embedding clustering.

use std::path::{Path, PathBuf};

use avs_core::model::AvsModel;
use avs_core::{ParamStore, Tensor};
use avs_data::image::write_gray;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{fusion_stages, Prepared};
use crate::error::{Result, TrainError};

/// Per-frame attention heatmaps `[T, H, W]` in `[0, 1]` for one TPAVI stage.
pub fn attention_heatmaps(model: &AvsModel, params: &ParamStore<f32>, video: &Prepared, stage: usize) -> Result<Tensor<f32>> {
    if !fusion_stages(model).contains(&stage) {
        return Err(TrainError::FusionAbsent(stage));
    }
    let (_, h, w, _) = video.frames.dims4()?;
    let (_, maps) = model.predict_normalized(params, video.frames.clone(), video.logmel.clone(), true)?;
    let map = maps.into_iter().find(|m| m.stage == stage).ok_or(TrainError::FusionAbsent(stage))?;
    Ok(map.heatmaps(h, w))
}

/// Writes `<video>_stage<s>_t<t>.png` for every frame.
pub fn export_heatmaps(model: &AvsModel, params: &ParamStore<f32>, video: &Prepared, stage: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = attention_heatmaps(model, params, video, stage)?;
    let (t, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(t);
    for (i, frame) in maps.data().chunks_exact(h * w).enumerate() {
        let path = out_dir.join(format!("{}_stage{stage}_t{i}.png", video.id));
        let bytes: Vec<u8> = frame.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        write_gray(&path, w, h, &bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub video_id: String,
    pub clip: usize,
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

/// Projects rows onto their two leading principal components. Each axis
/// is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0; 2]; n];
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| x * sign).collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for (a, axis) in axes.iter().enumerate() {
                p[a] = (0..d).map(|j| centered[(i, j)] * axis[j]).sum();
            }
            p
        })
        .collect()
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lloyd's K-means with k-means++ seeding; ties go to the lowest cluster.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(TrainError::TooFewSamples { samples: n, clusters: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..n)]];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut r = rng.random_range(0.0..total);
            d.iter().position(|&x| {
                r -= x;
                r < 0.0
            })
            .unwrap_or(n - 1)
        };
        centers.push(points[next]);
    }
    let nearest = |p: &[f64; 2], centers: &[[f64; 2]]| {
        (0..centers.len()).fold(0, |best, c| if dist2(p, &centers[c]) < dist2(p, &centers[best]) { c } else { best })
    };
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..300 {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                *center = [members.iter().map(|p| p[0]).sum::<f64>() / m, members.iter().map(|p| p[1]).sum::<f64>() / m];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

/// Audio embeddings of every clip, reduced to 2-D and partitioned into `k`
/// clusters.
pub fn cluster_audio_embeddings(model: &AvsModel, params: &ParamStore<f32>, videos: &[Prepared], k: usize, seed: u64) -> Result<Vec<ClusterPoint>> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for v in videos {
        let emb = model.audio.encode(params, &v.logmel)?;
        for t in 0..emb.clips() {
            ids.push((v.id.clone(), t));
            rows.push(emb.row(t).iter().map(|&x| f64::from(x)).collect::<Vec<f64>>());
        }
    }
    if rows.len() < k {
        return Err(TrainError::TooFewSamples { samples: rows.len(), clusters: k });
    }
    let coords = pca_2d(&rows);
    let labels = kmeans(&coords, k, seed)?;
    Ok(ids
        .into_iter()
        .zip(coords)
        .zip(labels)
        .map(|(((video_id, clip), [x, y]), label)| ClusterPoint { video_id, clip, x, y, label })
        .collect())
}

pub fn clusters_to_tsv(points: &[ClusterPoint]) -> String {
    let mut out = String::from("# video_id\tclip\tx\ty\tcluster\n");
    for p in points {
        out.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\t{}\n", p.video_id, p.clip, p.x, p.y, p.label));
    }
    out
}
