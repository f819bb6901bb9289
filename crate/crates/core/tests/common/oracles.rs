//! Straightforward reference implementations, written independently of the
//! library code they check.

/// Full-batch Lloyd iterations from the given initial centres until the
/// assignment stops changing.
pub fn lloyd(points: &[Vec<f64>], init: &[Vec<f64>], max_iters: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = init.len();
    let d = points[0].len();
    let mut centres = init.to_vec();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centre) in centres.iter().enumerate() {
                let mut dist = 0.0;
                for j in 0..d {
                    dist += (p[j] - centre[j]) * (p[j] - centre[j]);
                }
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..d {
                centres[c][j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    (labels, centres)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in decreasing order and the matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (denominator n - 1) of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for x in row.iter_mut() {
            *x /= (n - 1) as f64;
        }
    }
    c
}

/// Direct two-dimensional SSIM statistics: for each valid window position,
/// weighted moments from an explicit outer-product Gaussian window.
fn window_stats(a: &[f64], b: &[f64], side: usize) -> (f64, f64) {
    let size = side.min(11);
    let centre = (size as f64 - 1.0) / 2.0;
    let sigma = 1.5 * size as f64 / 11.0;
    let mut win = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, w) in row.iter_mut().enumerate() {
            let r2 = (y as f64 - centre).powi(2) + (x as f64 - centre).powi(2);
            *w = (-r2 / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let c1 = (0.01f64 * 2.0).powi(2);
    let c2 = (0.03f64 * 2.0).powi(2);
    let out = side - size + 1;
    let (mut cs_acc, mut ssim_acc) = (0.0, 0.0);
    for oy in 0..out {
        for ox in 0..out {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..size {
                for x in 0..size {
                    let w = win[y][x] / total;
                    let pa = a[(oy + y) * side + ox + x];
                    let pb = b[(oy + y) * side + ox + x];
                    ma += w * pa;
                    mb += w * pb;
                    saa += w * pa * pa;
                    sbb += w * pb * pb;
                    sab += w * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            cs_acc += cs;
            ssim_acc += l * cs;
        }
    }
    let count = (out * out) as f64;
    (cs_acc / count, ssim_acc / count)
}

fn halve(a: &[f64], side: usize) -> Vec<f64> {
    let h = side / 2;
    let mut out = Vec::with_capacity(h * h);
    for y in 0..h {
        for x in 0..h {
            let s = a[2 * y * side + 2 * x] + a[2 * y * side + 2 * x + 1] + a[(2 * y + 1) * side + 2 * x] + a[(2 * y + 1) * side + 2 * x + 1];
            out.push(s / 4.0);
        }
    }
    out
}

/// Multi-scale SSIM of two grayscale planes with the standard weights
/// truncated to `scales` and renormalized.
pub fn direct_msssim(a: &[f64], b: &[f64], side: usize, scales: usize) -> f64 {
    let all = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let norm: f64 = all[..scales].iter().sum();
    let (mut a, mut b, mut side) = (a.to_vec(), b.to_vec(), side);
    let mut result = 1.0;
    for s in 0..scales {
        let (cs, ssim) = window_stats(&a, &b, side);
        let w = all[s] / norm;
        let v = if s == scales - 1 { ssim } else { cs };
        result *= v.max(0.0).powf(w);
        a = halve(&a, side);
        b = halve(&b, side);
        side /= 2;
    }
    result
}

/// Rec. 601 luma of one CHW image.
pub fn luma(chw: &[f32], side: usize) -> Vec<f64> {
    let p = side * side;
    if chw.len() == p {
        return chw.iter().map(|&v| v as f64).collect();
    }
    (0..p).map(|i| 0.299 * chw[i] as f64 + 0.587 * chw[p + i] as f64 + 0.114 * chw[2 * p + i] as f64).collect()
}

/// `exp(mean KL(p_i || p_bar))` per split, averaged over splits, by plain loops.
pub fn kl_score(pred: &[Vec<f64>], splits: usize) -> f64 {
    let size = pred.len() / splits;
    let k = pred[0].len();
    let mut scores = Vec::new();
    for s in 0..splits {
        let part = &pred[s * size..(s + 1) * size];
        let mut marginal = vec![0.0; k];
        for p in part {
            for j in 0..k {
                marginal[j] += p[j] / size as f64;
            }
        }
        let mut kl_sum = 0.0;
        for p in part {
            for j in 0..k {
                if p[j] > 0.0 {
                    kl_sum += p[j] * (p[j].ln() - marginal[j].ln());
                }
            }
        }
        scores.push((kl_sum / size as f64).exp());
    }
    scores.iter().sum::<f64>() / splits as f64
}

/// Binary cross-entropy of a logit against a 0/1 target.
pub fn bce_logit(x: f64, target: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Softmax cross-entropy of one logit row against soft targets.
pub fn softmax_ce(logits: &[f64], targets: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    logits.iter().zip(targets).map(|(l, t)| -t * ((l - max) - z.ln())).sum()
}

/// Shannon entropy (nats) of a histogram.
pub fn entropy(hist: &[usize]) -> f64 {
    let n: usize = hist.iter().sum();
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Dense 2-D Gaussian blur with edge replication, truncated at `3 sigma`.
pub fn dense_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut acc, mut norm) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += wgt * img[yy * w + xx];
                    norm += wgt;
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}
