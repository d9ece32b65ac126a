//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Runs single-threaded. The data-dependent check runs only when
//! `MULTIEA_DBP4_RAW` or `MULTIEA_DWY3_RAW` points at a raw-data directory
//! (layout in the README).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use multiea::dataset::{split_labels, AlignmentLabel, MultiKgDataset};
use multiea::diffmath::relative_error;
use multiea::encoder::{encode, relation_projection, ModelParams};
use multiea::inference::{enhance, rank_candidates, EnhancementWeights, SimilarityMatrix, SimilaritySet};
use multiea::metrics::{evaluate, m_hits_at_k, EvalOptions};
use multiea::synthetic::{planted, PlantedConfig};
use multiea::training::{
    distance_anchor, distance_each, distance_mean, loss_and_gradients, prepare_graphs, train, NegativeBatch,
    Strategy, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORTHOGONALITY_TOL: f64 = 1e-10;
const ORTHOGONALITY_SECONDS: f64 = 1.0;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_EPS: f64 = 1e-6;
const GRADIENT_SAMPLES: usize = 50;
const GRADIENT_SECONDS: f64 = 30.0;
const STRATEGY_AGREEMENT_TOL: f64 = 1e-12;
const ROTATION_TOL: f64 = 1e-9;
const PLANTED_MIN_HITS: f64 = 0.90;
const PLANTED_GAMMA: f64 = 0.2;
const PLANTED_SECONDS: f64 = 300.0;
const SCALING_MAX_RATIO: f64 = 2.5;
const SCALING_EPOCHS: usize = 5;
const RATIO_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;
/// `None` when the criterion cannot run here.
type Criterion = fn() -> Option<Outcome>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn apply(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn orthogonality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_wtw, mut worst_norm) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let d = 2 + i % 63;
        let g = unit(&mut rng, d);
        let w = relation_projection(&g).map_err(|e| e.to_string())?;
        for a in 0..d {
            for b in 0..d {
                let wtw: f64 = (0..d).map(|k| w.row(k)[a] * w.row(k)[b]).sum();
                worst_wtw = worst_wtw.max((wtw - f64::from(u8::from(a == b))).abs());
            }
        }
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let wx: Vec<f64> = (0..d).map(|r| w.row(r).iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        worst_norm = worst_norm.max((norm(&wx) - norm(&x)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_wtw < ORTHOGONALITY_TOL && worst_norm < ORTHOGONALITY_TOL && secs < ORTHOGONALITY_SECONDS,
        format!("max |W^T W - I| {worst_wtw:.2e}, max norm change {worst_norm:.2e}, {secs:.3}s"),
    )
}

fn gradient_for(strategy: Strategy, anchor: Option<usize>, seed: u64) -> Result<f64, String> {
    let inst = planted(&PlantedConfig {
        graphs: 3,
        entities: 15,
        relations: 3,
        triples: 40,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let (kgs, graphs) = prepare_graphs(&inst.kgs).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::xavier(&kgs, 8, 2, &mut rng).map_err(|e| e.to_string())?;
    let labels: Vec<AlignmentLabel> = inst.labels.into_iter().take(6).collect();
    let counts: Vec<usize> = kgs.iter().map(|k| k.entity_count()).collect();
    let negatives = NegativeBatch::sample(&labels, &counts, 2, &mut rng).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        strategy,
        anchor_index: anchor,
        dim: 8,
        ..TrainConfig::default()
    };
    let loss_at = |p: &ModelParams| {
        loss_and_gradients(&graphs, p, &labels, &negatives, &config).map_err(|e| e.to_string())
    };
    let (_, grads, _) = loss_at(&params)?;
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut worst = 0.0f64;
    for flat_index in rand::seq::index::sample(&mut rng, flat.len(), GRADIENT_SAMPLES) {
        let (mut tensor, mut offset) = (0, flat_index);
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        let mut probe = params.clone();
        let orig = probe.tensors()[tensor].data()[offset];
        probe.tensors_mut()[tensor].data_mut()[offset] = orig + GRADIENT_EPS;
        let plus = loss_at(&probe)?.0;
        probe.tensors_mut()[tensor].data_mut()[offset] = orig - GRADIENT_EPS;
        let minus = loss_at(&probe)?.0;
        let numeric = (plus - minus) / (2.0 * GRADIENT_EPS);
        worst = worst.max(relative_error(flat[flat_index], numeric));
    }
    Ok(worst)
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (strategy, anchor, seed) in [
        (Strategy::Mean, None, 21),
        (Strategy::Anchor, Some(0), 22),
        (Strategy::Each, None, 23),
    ] {
        let err = gradient_for(strategy, anchor, seed)?;
        worst = worst.max(err);
        parts.push(format!("{strategy} {err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < GRADIENT_TOL && secs < GRADIENT_SECONDS,
        format!("{GRADIENT_SAMPLES} params per strategy, worst relative error: {}, {secs:.2}s", parts.join(", ")),
    )
}

/// Reference rank: sort by similarity descending, then entity ascending.
fn brute_rank(s: &SimilarityMatrix, row_entity: usize, col_entity: usize) -> usize {
    let i = s.rows().iter().position(|&e| e == row_entity).unwrap();
    let mut order: Vec<(f64, usize)> = s.cols().iter().enumerate().map(|(j, &e)| (s.get(i, j), e)).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    1 + order.iter().position(|&(_, e)| e == col_entity).unwrap()
}

fn brute_multi_hits(set: &SimilaritySet, labels: &[AlignmentLabel], m: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for target in 0..m {
        let hit = labels
            .iter()
            .filter(|l| {
                (0..m)
                    .filter(|&o| o != target)
                    .all(|o| brute_rank(set.get(target, o).unwrap(), l.entity(target), l.entity(o)) <= k)
            })
            .count();
        total += hit as f64 / labels.len() as f64;
    }
    total / m as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for instance in 0..200 {
        let m = rng.gen_range(3..=4);
        let pool = rng.gen_range(3..=6);
        let n = rng.gen_range(1..=pool);
        let cands: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let mut c: Vec<usize> = (0..pool).collect();
                c.shuffle(&mut rng);
                c
            })
            .collect();
        let labels: Vec<AlignmentLabel> =
            (0..n).map(|i| AlignmentLabel::new((0..m).map(|g| cands[g][i]).collect())).collect();
        let mut set = SimilaritySet::new(m);
        for a in 0..m {
            for b in (0..m).filter(|&b| b != a) {
                // coarse values so ties are common
                let values = (0..pool * pool).map(|_| f64::from(rng.gen_range(0u8..4)) / 4.0).collect();
                set.insert(a, b, SimilarityMatrix::new(cands[a].clone(), cands[b].clone(), values).unwrap());
            }
        }
        for k in 1..=3 {
            let got = m_hits_at_k(&set, &labels, k).map_err(|e| e.to_string())?.value;
            let want = brute_multi_hits(&set, &labels, m, k);
            if got != want {
                return Err(format!("instance {instance}, K = {k}: {got} != {want}"));
            }
        }
    }

    // graph 0 ranks the second label's graph-2 counterpart second
    let labels = vec![AlignmentLabel::new(vec![0, 0, 0]), AlignmentLabel::new(vec![1, 1, 1])];
    let mut set = SimilaritySet::new(3);
    let identity = SimilarityMatrix::new(vec![0, 1], vec![0, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let first_col = SimilarityMatrix::new(vec![0, 1], vec![0, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    for a in 0..3 {
        for b in (0..3).filter(|&b| b != a) {
            let s = if (a, b) == (0, 2) || (a, b) == (2, 0) { &first_col } else { &identity };
            set.insert(a, b, s.clone());
        }
    }
    let hand = m_hits_at_k(&set, &labels, 1).map_err(|e| e.to_string())?.value;
    check(
        (hand - 2.0 / 3.0).abs() < 1e-15,
        format!("200 random instances exact, hand example M-Hits@1 = {hand:.6}"),
    )
}

fn strategy_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_pair = 0.0f64;
    for _ in 0..1000 {
        let d = rng.gen_range(2..=16);
        let (u, v) = (unit(&mut rng, d), unit(&mut rng, d));
        let pair = [u.as_slice(), v.as_slice()];
        let each = distance_each(&pair);
        for other in [distance_mean(&pair), distance_anchor(&pair, 0), distance_anchor(&pair, 1)] {
            worst_pair = worst_pair.max((other - each).abs());
        }
    }
    let mut worst_rotation = 0.0f64;
    for _ in 0..200 {
        let (d, m) = (rng.gen_range(2..=8), rng.gen_range(2..=5));
        let embs: Vec<Vec<f64>> = (0..m).map(|_| unit(&mut rng, d)).collect();
        let refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let same: Vec<&[f64]> = vec![refs[0]; m];
        let zero = [distance_mean(&same), distance_anchor(&same, m - 1), distance_each(&same)];
        if zero.iter().any(|&z| z != 0.0) {
            return Err(format!("identical tuple gave distances {zero:?}"));
        }
        let q = random_orthogonal(&mut rng, d);
        let rotated: Vec<Vec<f64>> = embs.iter().map(|e| apply(&q, e)).collect();
        let rrefs: Vec<&[f64]> = rotated.iter().map(|e| e.as_slice()).collect();
        for (a, b) in [
            (distance_mean(&refs), distance_mean(&rrefs)),
            (distance_anchor(&refs, 0), distance_anchor(&rrefs, 0)),
            (distance_each(&refs), distance_each(&rrefs)),
        ] {
            worst_rotation = worst_rotation.max((a - b).abs());
        }
    }
    check(
        worst_pair < STRATEGY_AGREEMENT_TOL && worst_rotation < ROTATION_TOL,
        format!("M = 2 disagreement {worst_pair:.1e}, identical tuples 0, rotation change {worst_rotation:.1e}"),
    )
}

fn permutation_matrix(rows: usize, perm: &[usize]) -> SimilarityMatrix {
    let mut values = vec![0.0; rows * rows];
    for (i, &j) in perm.iter().enumerate() {
        values[i * rows + j] = 1.0;
    }
    SimilarityMatrix::new((0..rows).collect(), (0..rows).collect(), values).unwrap()
}

fn enhancement_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..50 {
        let n = rng.gen_range(2..=12);
        let noise = |rng: &mut ChaCha8Rng, scale: f64| {
            let values = (0..n * n).map(|_| scale * rng.gen::<f64>()).collect();
            SimilarityMatrix::new((0..n).collect(), (0..n).collect(), values).unwrap()
        };
        let direct = noise(&mut rng, 1.0);
        let paths: Vec<(SimilarityMatrix, SimilarityMatrix)> =
            (0..2).map(|_| (noise(&mut rng, 1.0), noise(&mut rng, 1.0))).collect();
        let refs: Vec<_> = paths.iter().map(|(a, b)| (a, b)).collect();
        let same = enhance(&direct, &refs, &EnhancementWeights::split(1.0, 2).unwrap()).map_err(|e| e.to_string())?;
        if same != direct {
            return Err(format!("trial {trial}: first-order weight 1 changed the matrix"));
        }

        // both intermediate routes carry the same composed permutation
        let mut p: Vec<usize> = (0..n).collect();
        let mut q: Vec<usize> = (0..n).collect();
        let mut r: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        q.shuffle(&mut rng);
        r.shuffle(&mut rng);
        let composed: Vec<usize> = p.iter().map(|&j| q[j]).collect();
        // second route: i -> r[i] -> composed[i]
        let mut r_inv = vec![0; n];
        for (i, &j) in r.iter().enumerate() {
            r_inv[j] = i;
        }
        let second: Vec<usize> = (0..n).map(|j| composed[r_inv[j]]).collect();
        let noisy = noise(&mut rng, 0.1);
        let (ac, cb) = (permutation_matrix(n, &p), permutation_matrix(n, &q));
        let (ad, db) = (permutation_matrix(n, &r), permutation_matrix(n, &second));
        let out = enhance(&noisy, &[(&ac, &cb), (&ad, &db)], &EnhancementWeights::split(0.2, 2).unwrap())
            .map_err(|e| e.to_string())?;
        for row in 0..n {
            let top = rank_candidates(&out, row, 1).map_err(|e| e.to_string())?[0];
            if top != composed[row] {
                return Err(format!("trial {trial}: row {row} argmax {top}, expected {}", composed[row]));
            }
        }
    }
    Ok("50 trials: first-order weight 1 exact, composed permutation recovered on every row".into())
}

fn planted_end_to_end() -> Outcome {
    let start = Instant::now();
    let config = TrainConfig::default();
    let inst = planted(&PlantedConfig::default()).map_err(|e| e.to_string())?;
    let (tr, te) = split_labels(&inst.labels, config.train_ratio, config.rng_seed).map_err(|e| e.to_string())?;
    let dataset = MultiKgDataset::new(inst.kgs, tr, te).map_err(|e| e.to_string())?;
    let outcome = train(&dataset, &config).map_err(|e| e.to_string())?;
    let (_, graphs) = prepare_graphs(&dataset.kgs).map_err(|e| e.to_string())?;
    let embeddings = encode(&graphs, &outcome.params).map_err(|e| e.to_string())?;
    let score = |gamma: Option<f64>| -> Result<f64, String> {
        let options = EvalOptions {
            ks: vec![1],
            gamma,
            ..EvalOptions::default()
        };
        let report = evaluate(&embeddings, &dataset.test_labels, &options).map_err(|e| e.to_string())?;
        Ok(report.headline(1).unwrap_or(f64::NAN))
    };
    let plain = score(None)?;
    let enhanced = score(Some(PLANTED_GAMMA))?;
    let secs = start.elapsed().as_secs_f64();
    check(
        enhanced >= PLANTED_MIN_HITS && enhanced >= plain && secs < PLANTED_SECONDS,
        format!(
            "M-Hits@1 enhanced {enhanced:.4} (gamma {PLANTED_GAMMA}), plain {plain:.4}, {} epochs, {secs:.1}s",
            outcome.curve.len()
        ),
    )
}

fn epoch_seconds(triples: usize) -> Result<f64, String> {
    let inst = planted(&PlantedConfig {
        triples,
        seed: 7,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (tr, te) = split_labels(&inst.labels, 0.3, 7).map_err(|e| e.to_string())?;
    let dataset = MultiKgDataset::new(inst.kgs, tr, te).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        max_epochs: SCALING_EPOCHS + 1,
        patience: SCALING_EPOCHS + 1,
        monitor_fraction: 0.0,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &config).map_err(|e| e.to_string())?;
    // the first epoch warms caches and allocator
    let steps: Vec<f64> = outcome.curve.iter().skip(1).map(|r| r.step_seconds).collect();
    Ok(steps.iter().sum::<f64>() / steps.len() as f64)
}

fn linear_time() -> Outcome {
    let base = epoch_seconds(3000)?;
    let doubled = epoch_seconds(6000)?;
    let ratio = doubled / base;
    check(
        ratio <= SCALING_MAX_RATIO,
        format!("per-epoch {base:.3}s -> {doubled:.3}s, ratio {ratio:.2}"),
    )
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multiea"))
}

fn run(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{cmd:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Expected {
    env: &'static str,
    name: &'static str,
    graphs: &'static [(&'static str, usize, usize, usize)],
    pairs: &'static [&'static str],
    labels: usize,
    ratio: Option<f64>,
}

const DBP4: Expected = Expected {
    env: "MULTIEA_DBP4_RAW",
    name: "DBP-4",
    graphs: &[
        ("en", 8901, 1034, 77483),
        ("fr", 3545, 774, 15843),
        ("ja", 4326, 519, 32427),
        ("zh", 3893, 619, 21497),
    ],
    pairs: &["en-fr", "en-ja", "en-zh"],
    labels: 2539,
    ratio: Some(0.4915),
};

const DWY3: Expected = Expected {
    env: "MULTIEA_DWY3_RAW",
    name: "DWY-3",
    graphs: &[
        ("dbp", 23784, 246, 94985),
        ("wiki", 22839, 153, 92019),
        ("yago", 22063, 30, 77457),
    ],
    pairs: &["dbp-wiki", "dbp-yago"],
    labels: 20729,
    ratio: None,
};

fn build_and_compare(raw: &Path, expected: &Expected, out: &Path) -> Result<String, String> {
    let mut cmd = binary();
    cmd.args(["--threads", "1", "build-dataset"]);
    for (name, ..) in expected.graphs {
        cmd.arg("--graph").arg(format!("{name}={}", raw.join(format!("{name}.tsv")).display()));
    }
    for pair in expected.pairs {
        cmd.arg("--pairs").arg(raw.join(format!("{pair}.tsv")));
    }
    cmd.arg("--out").arg(out);
    run(&mut cmd)?;
    let stats = std::fs::read_to_string(out.join("stats.tsv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = stats.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let mut problems = Vec::new();
    let mut entity_total = 0;
    for (name, ent, rel, tri) in expected.graphs {
        match rows.iter().find(|r| r[0] == *name) {
            Some(r) => {
                let got: Vec<usize> = r[1..].iter().map(|v| v.parse().unwrap_or(0)).collect();
                entity_total += got[0];
                if got != [*ent, *rel, *tri] {
                    problems.push(format!("{name} {got:?} != {:?}", [ent, rel, tri]));
                }
            }
            None => problems.push(format!("{name} missing from stats")),
        }
    }
    let labels: usize = rows
        .iter()
        .find(|r| r[0] == "#Labels")
        .and_then(|r| r[1].parse().ok())
        .unwrap_or(0);
    if labels != expected.labels {
        problems.push(format!("{labels} labels != {}", expected.labels));
    }
    let ratio = (labels * expected.graphs.len()) as f64 / entity_total.max(1) as f64;
    if let Some(want) = expected.ratio {
        if (ratio - want).abs() >= RATIO_TOL {
            problems.push(format!("label ratio {ratio:.4} != {want}"));
        }
    }
    if problems.is_empty() {
        Ok(format!("{} {labels} labels, ratio {ratio:.4}", expected.name))
    } else {
        Err(format!("{}: {}", expected.name, problems.join("; ")))
    }
}

fn dataset_tables() -> Option<Outcome> {
    let mut parts = Vec::new();
    for expected in [&DBP4, &DWY3] {
        let Some(raw) = std::env::var_os(expected.env).map(PathBuf::from) else {
            continue;
        };
        let dir = tempfile::tempdir().expect("temp dir");
        match build_and_compare(&raw, expected, dir.path()) {
            Ok(s) => parts.push(s),
            Err(e) => return Some(Err(e)),
        }
    }
    (!parts.is_empty()).then(|| Ok(parts.join("; ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    run(binary().args(["--threads", "1", "synth", "--entities", "60", "--triples", "300", "--seed", "9", "--out"]).arg(&data))?;
    let mut checkpoints = Vec::new();
    for attempt in 0..2 {
        let out = dir.path().join(format!("run{attempt}"));
        run(binary()
            .args(["--threads", "1", "train", "--dim", "16", "--max-epochs", "15", "--seed", "5", "--dataset"])
            .arg(&data)
            .arg("--out")
            .arg(&out))?;
        checkpoints.push(std::fs::read(out.join("checkpoint.bin")).map_err(|e| e.to_string())?);
    }
    check(
        checkpoints[0] == checkpoints[1],
        format!("two runs, checkpoints of {} bytes identical", checkpoints[0].len()),
    )
}

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("rayon pool");
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 orthogonality", || Some(orthogonality())),
        ("2 gradient oracle", || Some(gradient_oracle())),
        ("3 metric oracle", || Some(metric_oracle())),
        ("4 strategy identities", || Some(strategy_identities())),
        ("5 enhancement identities", || Some(enhancement_identities())),
        ("6 planted alignment", || Some(planted_end_to_end())),
        ("7 linear time", || Some(linear_time())),
        ("8 dataset tables", dataset_tables),
        ("9 determinism", || Some(determinism())),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = std::panic::catch_unwind(criterion)
            .unwrap_or_else(|p| Some(Err(format!("panicked: {:?}", p.downcast_ref::<String>()))));
        match outcome {
            Some(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
            None => println!("SKIP  {name}: set MULTIEA_DBP4_RAW or MULTIEA_DWY3_RAW to run"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
