//! Oracles and experiment drivers shared by the integration tests and the
//! acceptance harness.

#![allow(dead_code)]

use frame_contrast::cli::{sweep_cell, GridEntry};
use frame_contrast::data::{generate_synthetic, Dataset, SyntheticSpec};
use frame_contrast::numerics::{finite_diff_check, Tape, Tensor, Var};
use frame_contrast::objectives::{finegrained_loss, pairwise_nce_loss, qa_cross_entropy_loss};
use frame_contrast::retrieval::{median_rank, multiple_choice_accuracy, recall_at_k, SimilarityMatrix};
use frame_contrast::selector::{PositiveAssignment, SamplingStrategy};
use frame_contrast::trainkit::TrainConfig;
use frame_contrast::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-6;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `sum(w ⊙ y)` with fixed random weights, so every output entry matters.
fn probe(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn check<F>(f: F, params: Vec<Tensor>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_check(f, &params, GRAD_STEP, GRAD_TOLERANCE)?.max_rel_error)
}

/// Wraps a unary op `x -> y` with a weighted-sum probe.
fn unary<G>(shape: [usize; 2], out: &'static [usize], lo: f64, hi: f64, op: G) -> Case
where
    G: Fn(&mut Tape, Var) -> Result<Var> + Copy + 'static,
{
    Box::new(move |rng| {
        let x = uniform(rng, &shape, lo, hi);
        let w = uniform(rng, out, -1.0, 1.0);
        check(
            move |t, v| {
                let y = op(t, v[0])?;
                probe(t, y, &w)
            },
            vec![x],
        )
    })
}

fn binary<G>(a: [usize; 2], b: [usize; 2], out: [usize; 2], op: G) -> Case
where
    G: Fn(&mut Tape, Var, Var) -> Result<Var> + Copy + 'static,
{
    Box::new(move |rng| {
        let x = uniform(rng, &a, -2.0, 2.0);
        let y = uniform(rng, &b, -2.0, 2.0);
        let w = uniform(rng, &out, -1.0, 1.0);
        check(
            move |t, v| {
                let z = op(t, v[0], v[1])?;
                probe(t, z, &w)
            },
            vec![x, y],
        )
    })
}

/// Every differentiable tape op and every loss, by name.
pub fn gradient_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", binary([3, 4], [4, 2], [3, 2], |t, a, b| t.matmul(a, b))),
        ("add", binary([3, 4], [3, 4], [3, 4], |t, a, b| t.add(a, b))),
        ("add_row", binary([3, 4], [1, 4], [3, 4], |t, a, b| t.add_row(a, b))),
        ("sub", binary([3, 4], [3, 4], [3, 4], |t, a, b| t.sub(a, b))),
        ("mul", binary([3, 4], [3, 4], [3, 4], |t, a, b| t.mul(a, b))),
        (
            "concat_cols",
            binary([3, 2], [3, 4], [3, 6], |t, a, b| t.concat_cols(a, b)),
        ),
        (
            "stack_rows",
            binary([1, 4], [1, 4], [2, 4], |t, a, b| {
                t.stack_rows(&[a, b, a]).and_then(|s| t.gather_rows(s, &[0, 1]))
            }),
        ),
        ("scale", unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| Ok(t.scale(a, -1.7)))),
        ("tanh", unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| Ok(t.tanh(a)))),
        ("exp", unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| Ok(t.exp(a)))),
        ("log", unary([3, 4], &[3, 4], 0.5, 3.0, |t, a| Ok(t.log(a)))),
        (
            "softmax_rows",
            unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| t.softmax(a, 1)),
        ),
        (
            "softmax_cols",
            unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| t.softmax(a, 0)),
        ),
        (
            "log_softmax",
            unary([3, 4], &[3, 4], -2.0, 2.0, |t, a| t.log_softmax(a)),
        ),
        ("sum", unary([3, 4], &[], -2.0, 2.0, |t, a| Ok(t.sum(a)))),
        ("mean", unary([3, 4], &[], -2.0, 2.0, |t, a| Ok(t.mean(a)))),
        ("mean_rows", unary([3, 4], &[1, 4], -2.0, 2.0, |t, a| t.mean_rows(a))),
        ("transpose", unary([3, 4], &[4, 3], -2.0, 2.0, |t, a| t.transpose(a))),
        (
            "gather_rows",
            unary([3, 4], &[4, 4], -2.0, 2.0, |t, a| t.gather_rows(a, &[2, 0, 2, 1])),
        ),
        (
            "take",
            unary([3, 4], &[1, 5], -2.0, 2.0, |t, a| {
                let picked = t.take(a, &[11, 0, 5, 5, 7])?;
                t.stack_rows(&[picked])
            }),
        ),
        (
            "repeat_rows",
            unary([1, 4], &[3, 4], -2.0, 2.0, |t, a| t.repeat_rows(a, 3)),
        ),
        (
            "finegrained_loss",
            Box::new(|rng| {
                let rows: Vec<Tensor> = (0..3).map(|_| uniform(rng, &[1, 5], 0.0, 1.0)).collect();
                let assignments: Vec<PositiveAssignment> = (0..3)
                    .map(|_| {
                        let c = rng.random_range(1..5);
                        PositiveAssignment::from_positives(rand::seq::index::sample(rng, 5, c).into_vec(), 5).unwrap()
                    })
                    .collect();
                check(move |t, v| Ok(finegrained_loss(t, v, &assignments)?.0), rows)
            }),
        ),
        (
            "pairwise_nce_loss",
            Box::new(|rng| {
                let n = 3;
                let mut params: Vec<Tensor> = (0..n).map(|_| uniform(rng, &[1, 4], -1.0, 1.0)).collect();
                params.extend((0..n).map(|_| uniform(rng, &[1, 4], -1.0, 1.0)));
                check(move |t, v| pairwise_nce_loss(t, &v[..n], &v[n..], 0.5), params)
            }),
        ),
        (
            "qa_cross_entropy_loss",
            Box::new(|rng| {
                let answer = rng.random_range(0..5);
                check(
                    move |t, v| qa_cross_entropy_loss(t, v[0], answer),
                    vec![uniform(rng, &[1, 5], -3.0, 3.0)],
                )
            }),
        ),
    ]
}

/// Worst relative error per case over `seeds` random inputs.
pub fn gradient_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    gradient_cases()
        .into_iter()
        .map(|(name, case)| {
            let worst = (0..seeds)
                .map(|s| case(&mut ChaCha8Rng::seed_from_u64(s)).unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Ground-truth rank by full sort: descending score, then ascending column.
pub fn brute_rank(row: &[f64], gt: usize) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&j| j == gt).unwrap() + 1
}

/// Compares recall, median rank and MC accuracy with brute-force versions
/// on `trials` random instances; returns the number of disagreements.
pub fn metric_oracle_mismatches(trials: u64) -> usize {
    let mut bad = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..trials {
        let m = rng.random_range(1..=20);
        let n = rng.random_range(1..=20);
        // Small integer scores force frequent ties.
        let data: Vec<f64> = (0..m * n).map(|_| rng.random_range(0..6) as f64).collect();
        let gt: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let sim = SimilarityMatrix::new(Tensor::new(vec![m, n], data.clone()).unwrap(), gt.clone()).unwrap();
        let ranks: Vec<usize> = (0..m).map(|i| brute_rank(&data[i * n..(i + 1) * n], gt[i])).collect();
        for k in 1..=n {
            let want = 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / m as f64;
            if recall_at_k(&sim, k).unwrap() != want {
                bad += 1;
            }
        }
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let want_med = if m % 2 == 1 {
            sorted[m / 2] as f64
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0
        };
        if median_rank(&sim).unwrap() != want_med {
            bad += 1;
        }

        let c = rng.random_range(2..=6);
        let d = 3;
        let vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-2..=2) as f64).collect() };
        let videos: Vec<Vec<f64>> = (0..m).map(|_| vec(&mut rng)).collect();
        let cands: Vec<Vec<Vec<f64>>> = (0..m).map(|_| (0..c).map(|_| vec(&mut rng)).collect()).collect();
        let gold: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let correct = (0..m)
            .filter(|&q| {
                let scores: Vec<f64> = cands[q]
                    .iter()
                    .map(|cv| cv.iter().zip(&videos[q]).map(|(a, b)| a * b).sum())
                    .collect();
                brute_rank(&scores, gold[q]) == 1
            })
            .count();
        if multiple_choice_accuracy(&videos, &cands, &gold).unwrap() != correct as f64 / m as f64 {
            bad += 1;
        }
    }
    bad
}

/// The planted-relevance setting: 200 train and 100 test pairs drawn from
/// one generator, K = 32, a fifth of the frames planted.
pub fn planted_split() -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        num_pairs: 300,
        num_topics: 100,
        frames_per_video: 32,
        relevant_fraction: 0.2,
        tokens_per_text: 32,
        seed: 0,
        ..SyntheticSpec::default()
    };
    let mut all = generate_synthetic(&spec).unwrap();
    let test = all.examples.split_off(200);
    (all, Dataset { examples: test })
}

pub const PLANTED_K: usize = 7;

pub fn planted_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        warmup_steps: 100,
        total_steps: 1500,
        batch_size: 16,
        strategy: SamplingStrategy::FixedK(PLANTED_K),
        ..TrainConfig::default()
    }
}

/// Mean `(r1, selector_recall)` of one grid entry over `seeds`.
pub fn planted_mean(entry: GridEntry, seeds: &[u64], train: &Dataset, test: &Dataset) -> (f64, f64) {
    let config = planted_config();
    let mut sum = (0.0, 0.0);
    for &seed in seeds {
        let row = sweep_cell(&config, entry, seed, train, test, false).unwrap();
        sum.0 += row[3].parse::<f64>().unwrap();
        sum.1 += row[8].parse::<f64>().unwrap();
    }
    let n = seeds.len() as f64;
    (sum.0 / n, sum.1 / n)
}
