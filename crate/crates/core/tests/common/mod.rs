//! Helpers shared by the integration and acceptance tests.

#![allow(dead_code)]

use point_diffuse::denoiser::{DenoiserParams, DenoiserShape};
use point_diffuse::diffusion::{forward_diffuse, NoiseScales, NoiseSource};
use point_diffuse::geom::SemanticCloud;
use point_diffuse::nn::ParamSet;
use point_diffuse::rng::RngStream;
use point_diffuse::schedule::NoiseSchedule;
use point_diffuse::training::loss_with_gradient;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_cloud(n: usize, c: usize, spread: f64, rng: &mut impl Rng) -> SemanticCloud {
    let positions = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-spread..spread)))
        .collect();
    let mut semantics = Vec::with_capacity(n * c);
    for _ in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        semantics.extend(raw.iter().map(|v| v / s));
    }
    SemanticCloud::new(c, positions, semantics).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Relative error with a floor on the denominator. The floor grows with the
/// loss because central differences lose about `eps * loss / h` to
/// cancellation.
pub fn rel_err(a: f64, b: f64, loss: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * loss.abs().max(1.0))
}

/// Compares every analytic parameter gradient of the full loss against
/// central differences for one random small network and scene. Parameters
/// whose perturbation flips any activation sign are skipped.
pub fn gradient_check(seed: u64, lambda: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let hidden = rng.random_range(2..=5);
    let embed = 2 * rng.random_range(1..=2);
    let shape = DenoiserShape::new(c, hidden, embed).unwrap();
    let mut params = DenoiserParams::init(shape, seed);
    let mut flat = params.to_flat();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    params.assign_flat(&flat).unwrap();

    let condition = random_cloud(rng.random_range(1..=5), c, 1.5, &mut rng);
    let clean = random_cloud(rng.random_range(2..=6), c, 1.5, &mut rng);
    let schedule = NoiseSchedule::make_linear(0.01, 0.2, 20).unwrap();
    let t = rng.random_range(1..=20);
    let scales = NoiseScales::new(rng.random_range(0.5..1.5), rng.random_range(0.05..0.3)).unwrap();
    let source = NoiseSource::Seeded(RngStream::new(seed));
    let (noisy, noise) = forward_diffuse(&clean, t, &schedule, &scales, &source).unwrap();

    let eval = |p: &DenoiserParams| {
        let (pred, record) = p.forward(&noisy, &condition, t).unwrap();
        let (loss, grad) = loss_with_gradient(&noise, &pred, noisy.width(), &scales, lambda).unwrap();
        (loss.total, grad, record)
    };
    let (loss, grad_pred, record) = eval(&params);
    let analytic = params.backward(&record, &grad_pred).unwrap().params.to_flat();
    let signs = record.activation_signs();

    let h = 1e-5;
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    for k in 0..flat.len() {
        let mut shifted = |d: f64| {
            let mut v = flat.clone();
            v[k] += d;
            probe.assign_flat(&v).unwrap();
            let (loss, _, rec) = eval(&probe);
            (loss, rec.activation_signs() == signs)
        };
        let (up, same_up) = shifted(h);
        let (down, same_down) = shifted(-h);
        if !(same_up && same_down) {
            out.skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        out.max_rel_err = out.max_rel_err.max(rel_err(analytic[k], fd, loss));
        out.checked += 1;
    }
    out
}

pub fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Index of the nearest point, lowest index on ties.
pub fn brute_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        if sq(&points[i], q) < sq(&points[best], q) {
            best = i;
        }
    }
    best
}

pub fn brute_directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    total / from.len() as f64
}

pub fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    0.5 * (brute_directed(a, b) + brute_directed(b, a))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    best
}

/// Majority label per occupied cell, keyed by `(i, j, k)`, ties to the lowest class.
pub fn brute_voxelize(
    cloud: &SemanticCloud,
    origin: [f64; 3],
    size: f64,
    dims: [usize; 3],
) -> std::collections::BTreeMap<[usize; 3], usize> {
    let mut votes: std::collections::BTreeMap<[usize; 3], Vec<usize>> = Default::default();
    'points: for (i, p) in cloud.positions().iter().enumerate() {
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - origin[a]) / size).floor();
            if f < 0.0 || f >= dims[a] as f64 {
                continue 'points;
            }
            cell[a] = f as usize;
        }
        votes.entry(cell).or_insert_with(|| vec![0; cloud.class_count()])[argmax(cloud.semantics_of(i))] += 1;
    }
    votes
        .into_iter()
        .map(|(cell, v)| {
            let mut best = 0;
            for k in 1..v.len() {
                if v[k] > v[best] {
                    best = k;
                }
            }
            (cell, best)
        })
        .collect()
}

/// Tallies over a list of known cells. Returns occupancy `(tp, fp, fn)` and
/// per-class `(tp, fp, fn)`.
pub fn brute_tallies(
    pred: &std::collections::BTreeMap<[usize; 3], usize>,
    gt: &std::collections::BTreeMap<[usize; 3], usize>,
    known: impl Fn(&[usize; 3]) -> bool,
    class_count: usize,
) -> ((u64, u64, u64), Vec<(u64, u64, u64)>) {
    let mut occ = (0, 0, 0);
    let mut per = vec![(0, 0, 0); class_count];
    let cells: std::collections::BTreeSet<[usize; 3]> = pred.keys().chain(gt.keys()).copied().collect();
    for cell in cells.iter().filter(|c| known(c)) {
        match (pred.get(cell), gt.get(cell)) {
            (Some(&p), Some(&g)) => {
                occ.0 += 1;
                if p == g {
                    per[p].0 += 1;
                } else {
                    per[p].1 += 1;
                    per[g].2 += 1;
                }
            }
            (Some(&p), None) => {
                occ.1 += 1;
                per[p].1 += 1;
            }
            (None, Some(&g)) => {
                occ.2 += 1;
                per[g].2 += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (occ, per)
}

/// Overlap `[t_in, t_out]` of the segment `a + t (b - a)`, `t` in `[0, 1]`,
/// with the closed box, by the slab method.
pub fn segment_box_overlap(a: &[f64; 3], b: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        let d = b[k] - a[k];
        if d == 0.0 {
            if a[k] < lo[k] || a[k] > hi[k] {
                return None;
            }
        } else {
            let (u, v) = ((lo[k] - a[k]) / d, (hi[k] - a[k]) / d);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// `m * 2^e` with integer `m`; every finite `f64` is one.
fn dyadic(v: f64) -> (num_bigint::BigInt, i64) {
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    let m = num_bigint::BigInt::from(m);
    (if v < 0.0 { -m } else { m }, e)
}

/// `n * 2^e` rounded to `f64` through its leading 64 bits.
fn dyadic_to_f64(n: &num_bigint::BigInt, e: i64) -> f64 {
    use num_traits::{Signed, ToPrimitive};
    let bits = n.bits() as i64;
    let shift = (bits - 64).max(0);
    let top = (n.abs() >> shift as usize).to_u64().unwrap() as f64;
    let v = top * 2f64.powi((shift + e) as i32);
    if n.is_negative() { -v } else { v }
}

/// Exact `alpha_bar_t = prod (1 - beta_i)` and `1 - alpha_bar_t` for
/// `t = 1..=T`, each rounded once to `f64`.
pub fn exact_products(betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    use num_bigint::BigInt;
    // acc = num * 2^-scale
    let mut num = BigInt::from(1);
    let mut scale = 0i64;
    let mut bars = Vec::with_capacity(betas.len());
    let mut comps = Vec::with_capacity(betas.len());
    for &b in betas {
        let (m, e) = dyadic(b);
        let k = -e;
        assert!(k > 0, "beta below one has a negative binary exponent");
        num *= (BigInt::from(1) << k as usize) - m;
        scale += k;
        bars.push(dyadic_to_f64(&num, -scale));
        comps.push(dyadic_to_f64(&((BigInt::from(1) << scale as usize) - &num), -scale));
    }
    (bars, comps)
}

pub fn exact_alpha_bars(betas: &[f64]) -> Vec<f64> {
    exact_products(betas).0
}

pub fn exact_complements(betas: &[f64]) -> Vec<f64> {
    exact_products(betas).1
}

/// Minimal ASCII PLY reader: returns `(x, y, z, r, g, b)` per vertex.
pub fn parse_ascii_ply(text: &str) -> Vec<([f64; 3], [u8; 3])> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ply"));
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.as_slice() {
            ["format", f, _] => assert_eq!(*f, "ascii"),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().unwrap()),
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let at = |name: &str| props.iter().position(|p| p == name).unwrap();
    let (x, y, z, r, g, b) = (at("x"), at("y"), at("z"), at("red"), at("green"), at("blue"));
    let rows: Vec<_> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<&str> = l.split_whitespace().collect();
            let f = |i: usize| v[i].parse::<f64>().unwrap();
            let u = |i: usize| v[i].parse::<u8>().unwrap();
            ([f(x), f(y), f(z)], [u(r), u(g), u(b)])
        })
        .collect();
    assert_eq!(Some(rows.len()), count);
    rows
}

/// Nearest-neighbour index queries against an exhaustive scan. Ties are
/// accepted when both candidates are equally close.
pub fn check_nearest(seed: u64, instances: usize) -> Result<usize, String> {
    use point_diffuse::geom::SpatialIndex;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let n = rng.random_range(1..=300);
        let mut pts: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0)))
            .collect();
        if inst % 5 == 0 {
            // duplicated and grid-aligned points exercise ties
            for p in pts.iter_mut() {
                *p = p.map(|v| v.round());
            }
        }
        let index = SpatialIndex::build(&pts);
        for _ in 0..40 {
            let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(-6.0..6.0));
            let got = index.nearest(&q).map_err(|e| e.to_string())?;
            let want = brute_nearest(&pts, &q);
            if sq(&pts[got], &q) != sq(&pts[want], &q) {
                return Err(format!("instance {inst}: index {got} vs exhaustive {want} for {q:?}"));
            }
        }
    }
    Ok(instances)
}

pub fn check_voxelize(seed: u64, instances: usize) -> Result<usize, String> {
    use point_diffuse::geom::{voxelize, GridSpec};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let c = rng.random_range(1..=5);
        let size = [0.25, 0.5, 1.0][rng.random_range(0..3)];
        let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=6));
        let origin: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2i32..=2) as f64 * 0.5);
        let cloud = random_cloud(rng.random_range(0..=80), c, 2.0, &mut rng);
        let spec = GridSpec::new(origin, size, dims).unwrap();
        let grid = voxelize(&cloud, &spec);
        let want = brute_voxelize(&cloud, origin, size, dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let got = grid.label(spec.linear([i, j, k])).map(|l| l as usize);
                    if got != want.get(&[i, j, k]).copied() {
                        return Err(format!("instance {inst}: cell {:?} {got:?} vs {:?}", [i, j, k], want.get(&[i, j, k])));
                    }
                }
            }
        }
    }
    Ok(instances)
}

pub fn check_chamfer(seed: u64, instances: usize) -> Result<usize, String> {
    use point_diffuse::evaluation::chamfer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let c = rng.random_range(1..=3);
        let a = random_cloud(rng.random_range(1..=60), c, 3.0, &mut rng);
        let b = random_cloud(rng.random_range(1..=60), c, 3.0, &mut rng);
        let got = chamfer(&a, &b).map_err(|e| e.to_string())?;
        let want = brute_chamfer(a.positions(), b.positions());
        if (got - want).abs() > 1e-12 * want.max(1.0) {
            return Err(format!("instance {inst}: {got} vs {want}"));
        }
    }
    Ok(instances)
}

/// Random prediction, ground truth and mask through `evaluate`, against
/// set arithmetic over the brute-force voxelization.
pub fn check_tallies(seed: u64, instances: usize) -> Result<usize, String> {
    use point_diffuse::evaluation::{evaluate, EvalVolume};
    use point_diffuse::geom::VoxelGrid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let c = rng.random_range(1..=4);
        let volume = EvalVolume::new([-2.0; 3], [2.0; 3], 1.0).unwrap();
        let spec = *volume.grid();
        let pred = random_cloud(rng.random_range(0..=40), c, 2.5, &mut rng);
        let gt = random_cloud(rng.random_range(0..=40), c, 2.5, &mut rng);
        let mut mask = VoxelGrid::new_unknown(spec);
        let mut known = std::collections::BTreeSet::new();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    if rng.random_bool(0.7) {
                        mask.set_known(spec.linear([i, j, k]), true);
                        known.insert([i, j, k]);
                    }
                }
            }
        }
        let report = evaluate(&pred, &gt, &mask, &volume).map_err(|e| e.to_string())?;
        let pv = brute_voxelize(&pred, [-2.0; 3], 1.0, [4; 3]);
        let gv = brute_voxelize(&gt, [-2.0; 3], 1.0, [4; 3]);
        let (occ, per) = brute_tallies(&pv, &gv, |c| known.contains(c), c);
        let o = report.occupancy;
        if (o.tp, o.fp, o.fn_) != occ {
            return Err(format!("instance {inst}: occupancy {o:?} vs {occ:?}"));
        }
        for (k, want) in per.iter().enumerate() {
            let g = report.per_class[k];
            if (g.tp, g.fp, g.fn_) != *want {
                return Err(format!("instance {inst}: class {k} {g:?} vs {want:?}"));
            }
        }
        let ious: Vec<f64> = per
            .iter()
            .filter(|t| t.0 + t.1 + t.2 > 0)
            .map(|t| t.0 as f64 / (t.0 + t.1 + t.2) as f64)
            .collect();
        let miou = if ious.is_empty() { 1.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
        let denom = occ.0 + occ.1 + occ.2;
        let iou = if denom == 0 { 1.0 } else { occ.0 as f64 / denom as f64 };
        if (report.miou_ssc - miou).abs() > 1e-12 || (report.iou_sc - iou).abs() > 1e-12 {
            return Err(format!("instance {inst}: scores {} {} vs {iou} {miou}", report.iou_sc, report.miou_ssc));
        }
    }
    Ok(instances)
}

/// Known flags of `build_unknown_mask` against a per-cell slab test. Cells a
/// ray only grazes (overlap shorter than `1e-9`) may go either way.
pub fn check_mask(seed: u64, instances: usize) -> Result<usize, String> {
    use point_diffuse::dataset::{RaySet, RecordedRay};
    use point_diffuse::evaluation::{build_unknown_mask, EvalVolume};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..instances {
        let volume = EvalVolume::new([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0], 0.5).unwrap();
        let spec = *volume.grid();
        let origins: Vec<[f64; 3]> = (0..rng.random_range(1..=3))
            .map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
            .collect();
        let rays = (0..rng.random_range(1..=6))
            .map(|_| RecordedRay {
                origin: rng.random_range(0..origins.len()) as u32,
                end: std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
                hit: rng.random(),
            })
            .collect();
        let set = RaySet { origins, rays };
        let mask = build_unknown_mask(&set, &volume);
        for cell in 0..spec.cell_count() {
            let idx = spec.unlinear(cell);
            let lo = spec.cell_min(idx);
            let hi = lo.map(|v| v + spec.voxel_size);
            let (mut hit, mut graze) = (false, false);
            for r in &set.rays {
                match segment_box_overlap(&set.origin_of(r), &r.end, &lo, &hi) {
                    Some((a, b)) if b - a > 1e-9 => hit = true,
                    Some(_) => graze = true,
                    None => {}
                }
            }
            if !graze && mask.is_known(cell) != hit {
                return Err(format!("instance {inst}: cell {idx:?} known={} slab={hit}", mask.is_known(cell)));
            }
        }
    }
    Ok(instances)
}

/// Forward diffusion with recorded noise, inverted by hand. Returns the
/// largest per-channel error.
pub fn round_trip_error(seed: u64, instances: usize) -> f64 {
    use point_diffuse::schedule::ScheduleKind;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let n = rng.random_range(1..=200);
        let c = rng.random_range(1..=8);
        let clean = random_cloud(n, c, 20.0, &mut rng);
        let kind = [
            ScheduleKind::Linear,
            ScheduleKind::Cosine { literal: false },
            ScheduleKind::Sigmoid { sharpness: 6.0 },
        ][inst % 3];
        let steps = rng.random_range(1..=1000);
        let schedule = NoiseSchedule::from_kind(kind, 3.5e-5, 0.007, steps).unwrap();
        let t = rng.random_range(0..=steps);
        let scales = NoiseScales::default();
        let source = NoiseSource::Seeded(RngStream::new(seed ^ inst as u64));
        let (noisy, eps) = forward_diffuse(&clean, t, &schedule, &scales, &source).unwrap();
        let s = (1.0 - schedule.alpha_bar(t).unwrap()).sqrt();
        let w = 3 + c;
        let values = noisy.values();
        for i in 0..n {
            for k in 0..w {
                let orig = if k < 3 { clean.positions()[i][k] } else { clean.semantics_of(i)[k - 3] };
                let back = values[i * w + k] - s * eps[i * w + k];
                worst = worst.max((back - orig).abs());
            }
        }
    }
    worst
}

/// Two points and their labels assembled byte by byte.
pub const KITTI_SCAN_BYTES: [u8; 32] = [
    0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0, 0x00, 0x00, 0x00, 0x3F, 0x00, 0x00, 0x80, 0x3E, // 1, -2, 0.5, 0.25
    0x00, 0x00, 0x20, 0x41, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xC0, 0xBF, 0x00, 0x00, 0x80, 0x3F, // 10, 0, -1.5, 1
];
pub const KITTI_LABEL_BYTES: [u8; 8] = [
    0x0A, 0x00, 0x05, 0x00, // car (10), instance 5
    0x28, 0x00, 0x00, 0x00, // road (40)
];

pub fn check_kitti_fixture() -> Result<(), String> {
    use point_diffuse::dataset::{kitti_learning_map, read_kitti_scan};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scan = dir.path().join("000000.bin");
    let labels = dir.path().join("000000.label");
    std::fs::write(&scan, KITTI_SCAN_BYTES).unwrap();
    std::fs::write(&labels, KITTI_LABEL_BYTES).unwrap();
    let parsed = read_kitti_scan(&scan, Some(&labels)).map_err(|e| e.to_string())?;
    if parsed.points != vec![[1.0, -2.0, 0.5, 0.25], [10.0, 0.0, -1.5, 1.0]] {
        return Err(format!("points {:?}", parsed.points));
    }
    if parsed.labels != Some(vec![10, 40]) {
        return Err(format!("labels {:?}", parsed.labels));
    }
    if kitti_learning_map(10) != Some(0) || kitti_learning_map(40) != Some(8) || kitti_learning_map(0).is_some() {
        return Err("learning map".into());
    }
    std::fs::write(&scan, &KITTI_SCAN_BYTES[..31]).unwrap();
    if read_kitti_scan(&scan, None).is_ok() {
        return Err("truncated scan accepted".into());
    }
    std::fs::write(&scan, KITTI_SCAN_BYTES).unwrap();
    std::fs::write(&labels, &KITTI_LABEL_BYTES[..4]).unwrap();
    if read_kitti_scan(&scan, Some(&labels)).is_ok() {
        return Err("label count mismatch accepted".into());
    }
    Ok(())
}

/// Exports random clouds and reads them back with [`parse_ascii_ply`].
/// Returns the largest coordinate error.
pub fn check_ply_round_trip(seed: u64, instances: usize) -> Result<f64, String> {
    use point_diffuse::dataset::{export_ply, read_ply, ColorMap};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let colors = ColorMap::kitti();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let cloud = random_cloud(rng.random_range(0..200), colors.len(), 60.0, &mut rng);
        let path = dir.path().join(format!("{inst}.ply"));
        export_ply(&cloud, &path, &colors).map_err(|e| e.to_string())?;
        let rows = parse_ascii_ply(&std::fs::read_to_string(&path).unwrap());
        if rows.len() != cloud.len() {
            return Err(format!("instance {inst}: {} rows for {} points", rows.len(), cloud.len()));
        }
        for (i, (p, rgb)) in rows.iter().enumerate() {
            for k in 0..3 {
                worst = worst.max((p[k] - cloud.positions()[i][k]).abs());
            }
            if *rgb != colors.color(cloud.labels()[i]) {
                return Err(format!("instance {inst}: colour of point {i}"));
            }
        }
        let back = read_ply(&path, &colors).map_err(|e| e.to_string())?;
        if back.labels() != cloud.labels() {
            return Err(format!("instance {inst}: labels differ after read_ply"));
        }
    }
    Ok(worst)
}
