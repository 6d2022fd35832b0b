//! Independent reference implementations and the sweeps that compare the
//! library against them. Shared by the per-area integration tests and the
//! acceptance run.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptt_core::attention::{attention_weights, ptt_apply, AttentionKind, PttConfig, PttParams, SeedSet};
use ptt_core::autograd::ParamStore;
use ptt_core::geometry::{iou_3d, BoxSize, OrientedBox3, Point3, PointCloud, RigidTransform};
use ptt_core::nn::{Linear, Mlp};
use ptt_core::sampling::{knn, sample_feat_fps, sample_fps, SampleSpec};
use ptt_core::tensor::Tensor;

/// Outcome of one sweep.
#[derive(Debug, Clone, Default)]
pub struct Sweep {
    pub cases: usize,
    pub failures: Vec<String>,
    pub max_err: f64,
}

impl Sweep {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.failures.len() < 5 {
            self.failures.push(what());
        } else if !ok {
            self.failures.push(String::new());
        }
    }

    fn err(&mut self, e: f64) {
        if e > self.max_err || e.is_nan() {
            self.max_err = e;
        }
    }

    pub fn summary(&self) -> String {
        let shown: Vec<&str> = self.failures.iter().filter(|s| !s.is_empty()).map(String::as_str).collect();
        format!(
            "{} cases, {} failed, max err {:.3e}{}",
            self.cases,
            self.failures.len(),
            self.max_err,
            if shown.is_empty() { String::new() } else { format!(" [{}]", shown.join("; ")) }
        )
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Attention

pub struct PttCase {
    pub store: ParamStore,
    pub params: PttParams,
    pub seeds: SeedSet,
}

/// A random attention instance with `N <= 16`, `k <= 8`.
pub fn ptt_case(seed: u64) -> PttCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=16);
    let heads = rng.random_range(1..=2);
    let dim = [4, 6, 8][rng.random_range(0..3)];
    let embed = heads * rng.random_range(2..=4);
    let config = PttConfig {
        dim,
        embed_dim: embed,
        k: rng.random_range(2..=8usize).min(n),
        heads,
        layers: rng.random_range(1..=2),
        attention: if seed % 4 == 3 {
            AttentionKind::Scalar
        } else {
            AttentionKind::Vector
        },
    };
    let mut store = ParamStore::new();
    let params = PttParams::new(&mut store, "ptt", &config, &mut rng).unwrap();
    let coords: Vec<Point3> = (0..n)
        .map(|_| Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
        .collect();
    let feats = Tensor::from_fn(&[n, dim], |_| rng.random_range(-1.0..1.0));
    let seeds = SeedSet::new(coords, feats).unwrap();
    PttCase { store, params, seeds }
}

fn lin(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.w).value.data();
    let b = store.get(l.b).value.data();
    (0..l.dout)
        .map(|o| b[o] + (0..l.din).map(|i| x[i] * w[i * l.dout + o]).sum::<f64>())
        .collect()
}

fn mlp(store: &ParamStore, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in m.layers.iter().enumerate() {
        if i > 0 {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = lin(store, l, &h);
    }
    h
}

/// Neighbors by full sort on (squared distance, index).
pub fn knn_by_sort(query: &[Point3], base: &[Point3], k: usize) -> Vec<Vec<usize>> {
    query
        .iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = base.iter().enumerate().map(|(i, b)| (q.distance_squared(*b), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut row: Vec<usize> = d.iter().take(k).map(|x| x.1).collect();
            let nearest = row[0];
            row.resize(k, nearest);
            row
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Loop-by-loop evaluation of the attention block; returns the refined
/// features and the first layer's per-head weights `[head][i][j][c]`.
pub fn naive_ptt(case: &PttCase) -> (Vec<Vec<f64>>, Vec<Vec<Vec<Vec<f64>>>>) {
    let store = &case.store;
    let cfg = &case.params.config;
    let c = case.seeds.coords();
    let n = c.len();
    let nb = knn_by_sort(c, c, cfg.k);
    let mut f: Vec<Vec<f64>> = (0..n).map(|i| case.seeds.feats().row(i).to_vec()).collect();
    let mut first_weights = Vec::new();
    for (li, layer) in case.params.layers.iter().enumerate() {
        let emb: Vec<Vec<f64>> = f.iter().map(|x| lin(store, &layer.embed, x)).collect();
        let mut concat = vec![Vec::new(); n];
        for head in &layer.heads {
            let q: Vec<Vec<f64>> = emb.iter().map(|e| lin(store, &head.query, e)).collect();
            let k: Vec<Vec<f64>> = emb.iter().map(|e| lin(store, &head.key, e)).collect();
            let v: Vec<Vec<f64>> = emb.iter().map(|e| lin(store, &head.value, e)).collect();
            let mh = head.query.dout;
            let mut hw = Vec::with_capacity(n);
            for i in 0..n {
                let p: Vec<Vec<f64>> = nb[i]
                    .iter()
                    .map(|&j| mlp(store, &head.position, &(c[i] - c[j]).to_array()))
                    .collect();
                // w[j][ch]
                let w: Vec<Vec<f64>> = match cfg.attention {
                    AttentionKind::Vector => {
                        let logits: Vec<Vec<f64>> = nb[i]
                            .iter()
                            .enumerate()
                            .map(|(jj, &j)| {
                                let rel: Vec<f64> = (0..mh).map(|ch| q[i][ch] - k[j][ch] + p[jj][ch]).collect();
                                mlp(store, &head.gamma, &rel)
                            })
                            .collect();
                        let mut w = vec![vec![0.0; mh]; nb[i].len()];
                        for ch in 0..mh {
                            let col: Vec<f64> = logits.iter().map(|l| l[ch]).collect();
                            for (jj, s) in softmax(&col).into_iter().enumerate() {
                                w[jj][ch] = s;
                            }
                        }
                        w
                    }
                    AttentionKind::Scalar => {
                        let dots: Vec<f64> = nb[i]
                            .iter()
                            .map(|&j| (0..mh).map(|ch| q[i][ch] * k[j][ch]).sum::<f64>() / (mh as f64).sqrt())
                            .collect();
                        softmax(&dots).into_iter().map(|s| vec![s; mh]).collect()
                    }
                };
                for ch in 0..mh {
                    let a: f64 = nb[i]
                        .iter()
                        .enumerate()
                        .map(|(jj, &j)| w[jj][ch] * (v[j][ch] + p[jj][ch]))
                        .sum();
                    concat[i].push(a);
                }
                hw.push(w);
            }
            if li == 0 {
                first_weights.push(hw);
            }
        }
        for i in 0..n {
            let proj = lin(store, &layer.project, &concat[i]);
            for (x, y) in f[i].iter_mut().zip(proj) {
                *x += y;
            }
        }
    }
    (f, first_weights)
}

pub struct PttTolerances {
    pub translation: f64,
    pub permutation: f64,
    pub normalization: f64,
    pub oracle: f64,
}

pub const PTT_TOL: PttTolerances = PttTolerances {
    translation: 1e-9,
    permutation: 1e-9,
    normalization: 1e-12,
    oracle: 1e-10,
};

#[derive(Debug, Default)]
pub struct PttSweeps {
    pub residual: Sweep,
    pub translation: Sweep,
    pub permutation: Sweep,
    pub normalization: Sweep,
    pub oracle: Sweep,
}

impl PttSweeps {
    pub fn all(&self) -> [(&'static str, &Sweep); 5] {
        [
            ("residual identity (bitwise)", &self.residual),
            ("translation invariance", &self.translation),
            ("permutation equivariance", &self.permutation),
            ("per-channel weight normalization", &self.normalization),
            ("naive-loop oracle", &self.oracle),
        ]
    }
}

pub fn ptt_sweeps(instances: u64) -> PttSweeps {
    let mut s = PttSweeps::default();
    for seed in 0..instances {
        let case = ptt_case(seed);
        let out = ptt_apply(&case.store, &case.params, &case.seeds).unwrap();
        let n = case.seeds.len();

        // Zeroed parameters leave the features untouched.
        let mut zero = case.store.clone();
        zero.zero_all();
        let id = ptt_apply(&zero, &case.params, &case.seeds).unwrap();
        let bitwise = id.data().iter().zip(case.seeds.feats().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        s.residual.record(bitwise, || format!("seed {seed}"));

        let t = Point3::new(12.5, -7.25, 3.0);
        let moved = ptt_apply(&case.store, &case.params, &case.seeds.translated(t)).unwrap();
        let e = max_abs_diff(moved.data(), out.data());
        s.translation.err(e);
        s.translation.record(e <= PTT_TOL.translation, || format!("seed {seed}: {e:e}"));

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let coords: Vec<Point3> = perm.iter().map(|&i| case.seeds.coords()[i]).collect();
        let w = case.seeds.width();
        let feats = Tensor::from_fn(&[n, w], |x| case.seeds.feats().data()[perm[x / w] * w + x % w]);
        let permuted = ptt_apply(&case.store, &case.params, &SeedSet::new(coords, feats).unwrap()).unwrap();
        let e = (0..n)
            .map(|r| max_abs_diff(permuted.row(r), out.row(perm[r])))
            .fold(0.0, f64::max);
        s.permutation.err(e);
        s.permutation.record(e <= PTT_TOL.permutation, || format!("seed {seed}: {e:e}"));

        let (weights, _) = attention_weights(&case.store, &case.params, &case.seeds).unwrap();
        let mut e = 0.0f64;
        for layer in &weights {
            for wt in layer {
                let (rows, k, c) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                for i in 0..rows {
                    for ch in 0..c {
                        let sum: f64 = (0..k).map(|j| wt.data()[(i * k + j) * c + ch]).sum();
                        e = e.max((sum - 1.0).abs());
                        e = e.max(if (0..k).all(|j| wt.data()[(i * k + j) * c + ch] >= 0.0) { 0.0 } else { f64::INFINITY });
                    }
                }
            }
        }
        s.normalization.err(e);
        s.normalization.record(e <= PTT_TOL.normalization, || format!("seed {seed}: {e:e}"));

        let (naive, naive_w) = naive_ptt(&case);
        let mut e = (0..n).map(|r| max_abs_diff(out.row(r), &naive[r])).fold(0.0, f64::max);
        for (h, wt) in weights[0].iter().enumerate() {
            let flat: Vec<f64> = naive_w[h].iter().flatten().flatten().copied().collect();
            e = e.max(max_abs_diff(wt.data(), &flat));
        }
        s.oracle.err(e);
        s.oracle.record(e <= PTT_TOL.oracle, || format!("seed {seed}: {e:e}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Sampling

/// Farthest-point selection recomputing every minimum distance from scratch.
pub fn fps_by_rescan(rows: &[f64], width: usize, count: usize) -> Vec<usize> {
    let n = rows.len() / width;
    let d2 = |a: usize, b: usize| -> f64 {
        rows[a * width..(a + 1) * width]
            .iter()
            .zip(&rows[b * width..(b + 1) * width])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let mut sel = vec![0usize];
    while sel.len() < count.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if sel.contains(&i) {
                continue;
            }
            let m = sel.iter().map(|&s| d2(i, s)).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        sel.push(best.unwrap().0);
    }
    while sel.len() < count {
        sel.push(sel[sel.len() % n]);
    }
    sel
}

/// Coordinates, sometimes snapped to a coarse lattice to force ties.
fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize, snap: bool) -> Vec<f64> {
    (0..n * width)
        .map(|_| {
            let v: f64 = rng.random_range(-3.0..3.0);
            if snap {
                v.round()
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct SamplingSweeps {
    pub fps: Sweep,
    pub feat_fps: Sweep,
    pub knn: Sweep,
}

pub fn sampling_sweeps(cases: u64) -> SamplingSweeps {
    let mut s = SamplingSweeps::default();
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=64);
        let snap = seed % 5 == 0;
        let count = rng.random_range(1..=n + 4);

        let rows = random_rows(&mut rng, n, 3, snap);
        let cloud = PointCloud::new(rows.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect());
        let got = sample_fps(&cloud, &SampleSpec::fps(count)).unwrap().indices;
        let want = fps_by_rescan(&rows, 3, count);
        s.fps.record(got == want, || format!("seed {seed}"));

        let width = rng.random_range(1..=8);
        let desc = random_rows(&mut rng, n, width, snap);
        let got = sample_feat_fps(&desc, width, &SampleSpec::fps(count)).unwrap().indices;
        let want = fps_by_rescan(&desc, width, count);
        s.feat_fps.record(got == want, || format!("seed {seed}"));

        let q = rng.random_range(1..=16);
        let query: Vec<Point3> = random_rows(&mut rng, q, 3, snap)
            .chunks(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        let k = rng.random_range(1..=10);
        let got = knn(&query, cloud.points(), k).unwrap();
        let want = knn_by_sort(&query, cloud.points(), k);
        let same = (0..q).all(|i| got.row(i) == want[i].as_slice());
        s.knn.record(same, || format!("seed {seed}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Geometry

pub fn random_box(rng: &mut ChaCha8Rng, near: Point3, spread: f64) -> OrientedBox3 {
    let mut u = |r: f64| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    let c = near + Point3::new(u(spread), u(spread), u(spread) * 0.5);
    let size = BoxSize::new(rng.random_range(0.5..3.0), rng.random_range(0.5..2.5), rng.random_range(0.5..5.0));
    OrientedBox3::new(c, size, rng.random_range(-PI..PI)).unwrap()
}

/// Containment written out from the box's own axes.
fn inside(b: &OrientedBox3, p: Point3) -> bool {
    let d = p - b.center();
    let (s, c) = b.heading().sin_cos();
    let lx = c * d.x + s * d.y;
    let ly = -s * d.x + c * d.y;
    let sz = b.size();
    lx.abs() <= sz.l / 2.0 && ly.abs() <= sz.w / 2.0 && d.z.abs() <= sz.h / 2.0
}

/// Monte-Carlo IoU from `samples` uniform points inside `a`.
pub fn iou_monte_carlo(a: &OrientedBox3, b: &OrientedBox3, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let sz = a.size();
    let (s, c) = a.heading().sin_cos();
    let mut hits = 0usize;
    for _ in 0..samples {
        let lx = rng.random_range(-0.5..0.5) * sz.l;
        let ly = rng.random_range(-0.5..0.5) * sz.w;
        let lz = rng.random_range(-0.5..0.5) * sz.h;
        let p = a.center() + Point3::new(c * lx - s * ly, s * lx + c * ly, lz);
        if inside(b, p) {
            hits += 1;
        }
    }
    let inter = a.volume() * hits as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

#[derive(Debug, Default)]
pub struct GeometrySweeps {
    pub monte_carlo: Sweep,
    pub identical: Sweep,
    pub symmetry: Sweep,
    pub rigid: Sweep,
}

pub const MC_TOL: f64 = 1e-2;
pub const SYM_TOL: f64 = 1e-9;

pub fn geometry_sweeps(pairs: u64, samples: usize) -> GeometrySweeps {
    let mut s = GeometrySweeps::default();
    // Pairs are independent; spread them over a few threads.
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let results: Vec<(u64, f64, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..threads as u64)
            .map(|t| {
                sc.spawn(move || {
                    let mut out = Vec::new();
                    let mut seed = t;
                    while seed < pairs {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let a = random_box(&mut rng, Point3::ORIGIN, 0.0);
                        let b = random_box(&mut rng, a.center(), if seed % 10 == 0 { 6.0 } else { 1.5 });
                        let mc = iou_monte_carlo(&a, &b, samples, &mut rng);
                        out.push((seed, iou_3d(&a, &b), mc));
                        seed += threads as u64;
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    for (seed, exact, mc) in results {
        let e = (exact - mc).abs();
        s.monte_carlo.err(e);
        s.monte_carlo.record(e <= MC_TOL, || format!("seed {seed}: {exact} vs {mc}"));
    }
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_box(&mut rng, Point3::ORIGIN, 0.0);
        let b = random_box(&mut rng, a.center(), 1.5);
        s.identical.record(iou_3d(&a, &a) == 1.0 && iou_3d(&b, &b.clone()) == 1.0, || format!("seed {seed}"));

        let e = (iou_3d(&a, &b) - iou_3d(&b, &a)).abs();
        s.symmetry.err(e);
        s.symmetry.record(e <= SYM_TOL, || format!("seed {seed}: {e:e}"));

        let t = RigidTransform::new(
            Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-2.0..2.0)),
            rng.random_range(-PI..PI),
        );
        let e = (iou_3d(&a.transformed(&t).unwrap(), &b.transformed(&t).unwrap()) - iou_3d(&a, &b)).abs();
        s.rigid.err(e);
        s.rigid.record(e <= SYM_TOL, || format!("seed {seed}: {e:e}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Tracking loop

use ptt_core::pipeline::{track_sequence, FrameRegressor, OffsetStub, OracleStub, SearchPolicy, TrackerConfig};
use ptt_core::sequence::TrackSequence;
use ptt_core::synth::{generate_sequence, SceneSpec};

/// Moving, turning targets of varied density.
pub fn moving_sequences() -> Vec<TrackSequence> {
    (0..4u64)
        .map(|i| {
            let spec = SceneSpec {
                frames: 12,
                points: [60 + 40 * i as usize, 200],
                speed: 2.0 + 2.0 * i as f64,
                turn_rate: 0.2 * (i as f64 - 1.5),
                heading: 0.7 * i as f64,
                seed: 100 + i,
                ..SceneSpec::default()
            };
            generate_sequence(&spec, &format!("moving-{i}")).unwrap()
        })
        .collect()
}

pub fn static_sequence() -> TrackSequence {
    let spec = SceneSpec {
        frames: 10,
        speed: 0.0,
        seed: 5,
        ..SceneSpec::default()
    };
    generate_sequence(&spec, "static").unwrap()
}

fn small_tracker(search: SearchPolicy) -> TrackerConfig {
    TrackerConfig {
        search,
        template_points: 64,
        search_points: 256,
        ..TrackerConfig::default()
    }
}

/// Worst per-sequence `|mean IoU - 1|` of the oracle regressor.
pub fn oracle_iou_gap(search: SearchPolicy) -> f64 {
    moving_sequences()
        .iter()
        .map(|s| (track_sequence(s, &OracleStub, &small_tracker(search)).unwrap().mean_iou() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Center error per frame of a stub on the static target, following its own
/// previous output.
pub fn stub_center_errors(stub: &dyn FrameRegressor) -> Vec<f64> {
    let seq = static_sequence();
    let r = track_sequence(&seq, stub, &small_tracker(SearchPolicy::PreviousResult)).unwrap();
    r.boxes
        .iter()
        .zip(seq.gt_boxes())
        .map(|(p, g)| p.center().distance(g.center()))
        .collect()
}

pub fn bias_stub() -> OffsetStub {
    OffsetStub::x_bias(0.2)
}

// ---------------------------------------------------------------------------
// Metrics

/// Boxes `7 x 2 x 1` shifted along their length axis. A shift `d` gives
/// IoU `(7 - d) / (7 + d)`: 0 -> 1, 1.75 -> 0.6, 3 -> 0.4, 10 -> 0.
pub fn four_frame_fixture() -> (Vec<OrientedBox3>, Vec<OrientedBox3>) {
    let at = |x: f64| OrientedBox3::new(Point3::new(x, 0.0, 0.0), BoxSize::new(2.0, 1.0, 7.0), 0.0).unwrap();
    let gt = vec![at(0.0); 5];
    let pred = vec![at(0.0), at(0.0), at(1.75), at(3.0), at(10.0)];
    (pred, gt)
}

/// Success on the 21-point overlap grid for IoUs {1, 0.6, 0.4, 0}:
/// `iou > t` holds for 3 frames at t = 0..0.35 (8 points), 2 at
/// t = 0.4..0.55 (4), 1 at t = 0.6..0.95 (8), 0 at t = 1. Trapezoid area
/// `0.05 * (8*0.75 + 4*0.5 + 8*0.25 + 0 - (0.75 + 0) / 2) = 0.48125`.
pub const FOUR_FRAME_SUCCESS: f64 = 48.125;

/// Precision for center errors {0, 1.75, 3, 10} on the 21-point grid over
/// [0, 2 m]: `err < t` holds for 0 frames at t = 0, 1 at t = 0.1..1.7
/// (17 points), 2 at t = 1.8..2.0 (3). Area over the 2 m range:
/// `0.1 * (17*0.25 + 3*0.5 - (0 + 0.5) / 2) / 2 = 0.275`.
pub const FOUR_FRAME_PRECISION: f64 = 27.5;

/// The 0003 fixture grouped by hand: `(track id, type, frames, source
/// lines)`. Line 3 is DontCare.
pub fn kitti_hand_grouping() -> Vec<(i64, &'static str, Vec<u32>, Vec<usize>)> {
    vec![(0, "Car", vec![0, 1, 2], vec![1, 4, 6]), (4, "Van", vec![0, 2], vec![2, 5])]
}

/// On-target points per frame, counted with this module's own containment.
pub fn recount(seqs: &[TrackSequence]) -> Vec<usize> {
    seqs.iter()
        .flat_map(|s| {
            s.frames()
                .iter()
                .map(|f| f.cloud.points().iter().filter(|&&p| inside(&f.gt, p)).count())
        })
        .collect()
}

/// Bucket index with edges 20, 100, 500.
pub fn bucket_of(n: usize) -> usize {
    [20, 100, 500].iter().filter(|&&e| n >= e).count()
}
