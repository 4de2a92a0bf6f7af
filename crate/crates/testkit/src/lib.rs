//! Slow, loop-based reference computations. Nothing here shares code with
//! the implementation under test; everything works on flat row-major slices.

/// Dense row-major matrix `rows x cols` plus a bias of length `cols`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Affine {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = self.bias.clone();
        for (j, o) in out.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                *o += xi * self.weight[i * self.cols + j];
            }
        }
        out
    }
}

pub struct TpaviWeights {
    pub audio: Affine,
    pub theta: Affine,
    pub phi: Affine,
    pub g: Affine,
    pub mu: Affine,
}

/// Fused output and the `N x N` similarity for `v: [T, h, w, C]` and
/// `audio: [T, d]`, straight from the defining sums.
pub fn tpavi_nested(v: &[f64], t: usize, h: usize, w: usize, c: usize, audio: &[f64], d: usize, wts: &TpaviWeights) -> (Vec<f64>, Vec<f64>) {
    let n = t * h * w;
    let pix = |p: usize| &v[p * c..(p + 1) * c];
    let a_hat: Vec<Vec<f64>> = (0..t).map(|ti| wts.audio.apply(&audio[ti * d..(ti + 1) * d])).collect();
    let theta: Vec<Vec<f64>> = (0..n).map(|p| wts.theta.apply(pix(p))).collect();
    let gv: Vec<Vec<f64>> = (0..n).map(|p| wts.g.apply(pix(p))).collect();
    let phi: Vec<Vec<f64>> = (0..n).map(|q| wts.phi.apply(&a_hat[q / (h * w)])).collect();
    let mut alpha = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            let mut s = 0.0;
            for k in 0..theta[p].len() {
                s += theta[p][k] * phi[q][k];
            }
            alpha[p * n + q] = s / n as f64;
        }
    }
    let mut z = v.to_vec();
    for p in 0..n {
        let inner = gv[0].len();
        let mut y = vec![0.0; inner];
        for q in 0..n {
            for k in 0..inner {
                y[k] += alpha[p * n + q] * gv[q][k];
            }
        }
        let m = wts.mu.apply(&y);
        for ch in 0..c {
            z[p * c + ch] += m[ch];
        }
    }
    (z, alpha)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `KL(softmax(p) || softmax(q))` for one pair of logit vectors.
pub fn kl_logits(p: &[f64], q: &[f64]) -> f64 {
    let (ps, qs) = (softmax(p), softmax(q));
    ps.iter().zip(&qs).map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce(probs: &[f64], labels: &[u8], eps: f64) -> f64 {
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        let p = p.clamp(eps, 1.0 - eps);
        total += if *y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    total / probs.len() as f64
}

/// Mean categorical cross-entropy; `probs` holds `k` values per pixel.
pub fn cross_entropy(probs: &[f64], labels: &[u8], k: usize, eps: f64) -> f64 {
    let mut total = 0.0;
    for (i, y) in labels.iter().enumerate() {
        total -= probs[i * k + *y as usize].clamp(eps, 1.0 - eps).ln();
    }
    total / labels.len() as f64
}

/// Per clip, the spatial mean of `z` (`[t, hz, wz, c]`) weighted by `mask`
/// (`[t, h, w]`) average-pooled down to `hz x wz`.
pub fn masked_average(mask: &[f64], (t, h, w): (usize, usize, usize), z: &[f64], (hz, wz, c): (usize, usize, usize)) -> Vec<Vec<f64>> {
    let f = h / hz;
    (0..t)
        .map(|ti| {
            let mut out = vec![0.0; c];
            for y in 0..hz {
                for x in 0..wz {
                    let mut m = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            m += mask[(ti * h + y * f + dy) * w + x * f + dx];
                        }
                    }
                    m /= (f * f) as f64;
                    for ch in 0..c {
                        out[ch] += m * z[((ti * hz + y) * wz + x) * c + ch] / (hz * wz) as f64;
                    }
                }
            }
            out
        })
        .collect()
}

/// For each row, the closest other row by squared Euclidean distance,
/// lowest index on ties.
pub fn nearest_partner(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for j in 0..rows.len() {
            if j == i {
                continue;
            }
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
        out.push(best.expect("at least two rows"));
    }
    out
}

/// Intersection, prediction and ground-truth pixel counts for one class.
pub fn class_counts(pred: &[u8], gt: &[u8], class: u8) -> (u64, u64, u64) {
    let mut inter = 0;
    let mut np = 0;
    let mut ng = 0;
    for i in 0..pred.len() {
        if pred[i] == class {
            np += 1;
        }
        if gt[i] == class {
            ng += 1;
        }
        if pred[i] == class && gt[i] == class {
            inter += 1;
        }
    }
    (inter, np, ng)
}

pub fn iou_from_counts(inter: u64, np: u64, ng: u64) -> f64 {
    let union = np + ng - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn f_from_counts(inter: u64, np: u64, ng: u64, beta2: f64) -> f64 {
    if np == 0 && ng == 0 {
        return 1.0;
    }
    let precision = if np == 0 { 0.0 } else { inter as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { inter as f64 / ng as f64 };
    if beta2 * precision + recall == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
    }
}

/// Binary video score: per-frame IoU and F averaged over frames.
pub fn binary_video_scores(pred_frames: &[Vec<u8>], gt_frames: &[Vec<u8>], beta2: f64) -> (f64, f64) {
    let mut miou = 0.0;
    let mut f = 0.0;
    for (p, g) in pred_frames.iter().zip(gt_frames) {
        let (i, np, ng) = class_counts(p, g, 1);
        miou += iou_from_counts(i, np, ng);
        f += f_from_counts(i, np, ng, beta2);
    }
    let n = pred_frames.len() as f64;
    (miou / n, f / n)
}

/// Multi-class video score: counts pooled over frames per foreground
/// class, averaged over classes present in either mask.
pub fn multiclass_video_scores(pred_frames: &[Vec<u8>], gt_frames: &[Vec<u8>], k: usize, beta2: f64) -> (f64, f64) {
    let mut ious = Vec::new();
    let mut fs = Vec::new();
    for class in 1..k as u8 {
        let (mut i, mut np, mut ng) = (0, 0, 0);
        for (p, g) in pred_frames.iter().zip(gt_frames) {
            let c = class_counts(p, g, class);
            i += c.0;
            np += c.1;
            ng += c.2;
        }
        if np + ng > 0 {
            ious.push(iou_from_counts(i, np, ng));
            fs.push(f_from_counts(i, np, ng, beta2));
        }
    }
    if ious.is_empty() {
        return (1.0, 1.0);
    }
    let n = ious.len() as f64;
    (ious.iter().sum::<f64>() / n, fs.iter().sum::<f64>() / n)
}
