//! Acceptance suite. Runs as a plain binary (no libtest harness) so every
//! criterion prints its verdict line even when it passes. Exits nonzero if
//! any criterion fails.
//!
//! Training budgets and tolerances are pinned below. The full run trains
//! 5 seeds of four multi-sensor DDPG variants, two NAF variants and the
//! single-sensor DDPG baseline, so expect tens of minutes on one core.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdrl::analysis::{pca_embed, top_eigenpairs};
use sdrl::env::{EnvConfig, ImageSpec, LaserSpec, StartMode};
use sdrl::harness::checkpoint::{load_agent, resume_trainer, trainer_checkpoint, Checkpoint};
use sdrl::harness::matrix::{cell_dir, run_matrix, train_cell, CHECKPOINT_FILE};
use sdrl::harness::ExperimentConfig;
use sdrl::nn::{Activation, LayerSpec, Network};
use sdrl::rl::naf::advantage;
use sdrl::rl::{
    aux_penalty, curve_csv, Agent, Algorithm, AuxSpec, Batch, FeatureMask, Model, SdChoice, TrainConfig, Trainer,
    Transition, Variant,
};
use sdrl::sensor_dropout::{apply_mask, enumerate_configs, rescale_factor, DropConfig, DropDistribution};

// ---- pinned tolerances ----
const FD_STEP: f64 = 1e-5;
const FD_MAX_REL: f64 = 1e-6;
/// Relative error is taken against `max(|analytic|, |numeric|, FD_FLOOR)` so
/// that components near zero are judged by absolute error instead.
const FD_FLOOR: f64 = 1e-4;
const FD_INSTANCES: usize = 10;
const GRAD_RUNTIME_SECS: f64 = 60.0;
const SD_SUM_TOL: f64 = 1e-12;
const NAF_PAIRS: usize = 1000;
const NAF_ZERO_TOL: f64 = 1e-9;
const PCA_TOL: f64 = 1e-8;
const LEARN_FACTOR: f64 = 5.0;
const LEARN_MIN_SEEDS: usize = 4;
const LEARN_SECS_PER_SEED: f64 = 300.0;

// ---- pinned budgets ----
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const UNI_EPISODES: usize = 150;
const MULTI_EPISODES: usize = 100;
const NAF_EPISODES: usize = 100;
const EQUIV_EPISODES: usize = 20;
const NOISE_SIGMA: f64 = 0.1;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, pass: bool, detail: impl Into<String>) -> Verdict {
    let v = Verdict { id, pass, detail: detail.into() };
    println!("criterion {:>2}: {} | {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("sdrl-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    p
}

// ---------------------------------------------------------------- criterion 1

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Central-difference disagreement between steps `h` and `h/10` above which
/// a component is treated as straddling a ReLU kink rather than as a bad gradient.
const KINK_SPLIT: f64 = 1e-4;
/// At most this fraction of checked components may be excluded as kinks.
const MAX_KINK_FRACTION: f64 = 1e-3;

static KINKS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
static COMPONENTS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

/// Worst relative error of `analytic` against central differences of `f` at `x`.
fn fd_check(analytic: &[f64], x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    use std::sync::atomic::Ordering::Relaxed;
    assert_eq!(analytic.len(), x.len());
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    let mut central = |p: &mut Vec<f64>, i: usize, h: f64| {
        p[i] = x[i] + h;
        let fp = f(p);
        p[i] = x[i] - h;
        let fm = f(p);
        p[i] = x[i];
        (fp - fm) / (2.0 * h)
    };
    for i in 0..x.len() {
        COMPONENTS.fetch_add(1, Relaxed);
        let n1 = central(&mut p, i, FD_STEP);
        let e = rel_err(analytic[i], n1);
        if e >= FD_MAX_REL {
            let n2 = central(&mut p, i, FD_STEP / 10.0);
            if rel_err(n1, n2) > KINK_SPLIT {
                KINKS.fetch_add(1, Relaxed);
                continue;
            }
        }
        worst = worst.max(e);
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random values bounded away from the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst error over params and inputs of `sum(c * net(x))`.
fn layer_check(net: &Network, x: &[f64], batch: usize, rng: &mut ChaCha8Rng) -> f64 {
    let tape = net.forward_batch(x, batch).unwrap();
    let c = uniform(rng, tape.output().len(), -1.0, 1.0);
    let (gp, gx) = net.backward_batch(&tape, &c).unwrap();
    let params = net.params().to_vec();
    let wp = fd_check(&gp, &params, |p| {
        let mut n2 = net.clone();
        n2.set_params(p).unwrap();
        dot(n2.forward_batch(x, batch).unwrap().output(), &c)
    });
    let wx = fd_check(&gx, x, |xi| dot(net.forward_batch(xi, batch).unwrap().output(), &c));
    wp.max(wx)
}

fn small_env() -> EnvConfig {
    EnvConfig {
        laser: LaserSpec { beams: 9, ..LaserSpec::default() },
        image: ImageSpec { height: 8, width: 8, ..ImageSpec::default() },
        ..EnvConfig::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Batch {
    let rows: Vec<Transition> = (0..n)
        .map(|_| Transition {
            state: uniform(rng, dim, 0.0, 1.0),
            action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            reward: rng.random_range(-1.0..1.0),
            next_state: uniform(rng, dim, 0.0, 1.0),
            done: false,
        })
        .collect();
    Batch::from_transitions(&rows.iter().collect::<Vec<_>>()).unwrap()
}

fn flat_params(nets: &[&Network]) -> Vec<f64> {
    nets.iter().flat_map(|n| n.params().iter().copied()).collect()
}

fn set_flat(nets: Vec<&mut Network>, flat: &[f64]) {
    let mut at = 0;
    for n in nets {
        let k = n.param_count();
        n.set_params(&flat[at..at + k]).unwrap();
        at += k;
    }
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    let env = small_env();
    for inst in 0..FD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst as u64);
        let batch = 3;

        let net = Network::new(5, vec![LayerSpec::Dense { inputs: 5, outputs: 4 }], &mut rng).unwrap();
        let x = uniform(&mut rng, 5 * batch, -1.0, 1.0);
        note("dense", layer_check(&net, &x, batch, &mut rng));

        let spec = LayerSpec::Conv1d { channels: 2, length: 9, filters: 3, size: 3, stride: 2 };
        let net = Network::new(18, vec![spec], &mut rng).unwrap();
        let x = uniform(&mut rng, 18 * batch, -1.0, 1.0);
        note("conv1d", layer_check(&net, &x, batch, &mut rng));

        let spec = LayerSpec::Conv2d { channels: 2, height: 6, width: 6, filters: 3, size: 2, stride: 2 };
        let net = Network::new(72, vec![spec], &mut rng).unwrap();
        let x = uniform(&mut rng, 72 * batch, -1.0, 1.0);
        note("conv2d", layer_check(&net, &x, batch, &mut rng));

        for (name, kind) in [
            ("relu", Activation::Relu),
            ("tanh", Activation::Tanh),
            ("sigmoid", Activation::Sigmoid),
            ("linear", Activation::Linear),
        ] {
            let net = Network::new(6, vec![LayerSpec::Activation { kind, width: 6 }], &mut rng).unwrap();
            let x = off_kink(&mut rng, 6 * batch);
            note(name, layer_check(&net, &x, batch, &mut rng));
        }

        // NAF advantage: dA/dl = -(u0 d0, u1 d0, u1 d1), dA/dd = -L^T u.
        let l = uniform(&mut rng, 3, -1.5, 1.5);
        let d = uniform(&mut rng, 2, -1.0, 1.0);
        let (_, u) = advantage(&l, [d[0], d[1]]);
        let dl = [-u[0] * d[0], -u[1] * d[0], -u[1] * d[1]];
        note("naf_A", fd_check(&dl, &l, |li| advantage(li, [d[0], d[1]]).0));
        let dd = [-(l[0] * u[0] + l[1] * u[1]), -l[2] * u[1]];
        note("naf_A", fd_check(&dd, &d, |di| advantage(&l, [di[0], di[1]]).0));

        // NAF Q over every parameter, and V at a = mu(s).
        let agent = Agent::new(Algorithm::Naf, Variant::MultiSd, &env, 6, 1e-4, 1e-3, &mut rng).unwrap();
        let Model::Naf(naf) = &agent.model else { unreachable!() };
        let net = &naf.online;
        let n = 3;
        let dim = agent.state_dim();
        let states = uniform(&mut rng, n * dim, 0.0, 1.0);
        let actions = uniform(&mut rng, n * 2, -1.0, 1.0);
        let c = uniform(&mut rng, n, -1.0, 1.0);
        let pass = net.forward(&states, n, &actions, vec![FeatureMask::Identity]).unwrap();
        let grads: Vec<f64> = net.backward(&pass, &c, None).unwrap().concat();
        let theta = flat_params(&net.nets());
        note(
            "naf_Q",
            fd_check(&grads, &theta, |p| {
                let mut m = net.clone();
                set_flat(m.nets_mut(), p);
                dot(&m.forward(&states, n, &actions, vec![FeatureMask::Identity]).unwrap().out.q, &c)
            }),
        );
        let mu = pass.out.mu.clone();
        let at_mu = net.forward(&states, n, &mu, vec![FeatureMask::Identity]).unwrap();
        let grads: Vec<f64> = net.backward(&at_mu, &c, None).unwrap().concat();
        note(
            "naf_V",
            fd_check(&grads, &theta, |p| {
                let mut m = net.clone();
                set_flat(m.nets_mut(), p);
                dot(&m.value_and_l(&states, n).unwrap().0, &c)
            }),
        );

        // DDPG actor objective with the aux term over all seven sub-policies.
        let agent = Agent::new(Algorithm::Ddpg, Variant::MultiSdAux, &env, 6, 1e-4, 1e-3, &mut rng).unwrap();
        let masks: Vec<FeatureMask> =
            enumerate_configs(3).unwrap().iter().map(|c| agent.config_mask(c).unwrap()).collect();
        let Model::Ddpg(ddpg) = &agent.model else { unreachable!() };
        let batch_t = random_batch(&mut rng, 4, agent.state_dim());
        let aux = AuxSpec { lambda: 0.3, masks };
        let mask = masks_pick(&aux, inst);
        let ag = ddpg.actor_loss_grads(&batch_t, mask.clone(), Some(&aux)).unwrap();
        let grads: Vec<f64> = ag.grads.concat();
        let theta = flat_params(&ddpg.actor.nets());
        note(
            "ddpg_actor",
            fd_check(&grads, &theta, |p| {
                let mut a = ddpg.clone();
                set_flat(a.actor.nets_mut(), p);
                let g = a.actor_loss_grads(&batch_t, mask.clone(), Some(&aux)).unwrap();
                -g.objective + g.aux_loss
            }),
        );

        // Aux penalty alone.
        let k = 7;
        let online = uniform(&mut rng, k * 5 * 2, -1.0, 1.0);
        let target = uniform(&mut rng, 5 * 2, -1.0, 1.0);
        let (_, g) = aux_penalty(&online, &target, 0.7).unwrap();
        note("aux_loss", fd_check(&g, &online, |o| aux_penalty(o, &target, 0.7).unwrap().0));
    }
    let secs = t0.elapsed().as_secs_f64();
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    let kinks = KINKS.load(std::sync::atomic::Ordering::Relaxed);
    let total = COMPONENTS.load(std::sync::atomic::Ordering::Relaxed);
    let kink_ok = (kinks as f64) <= MAX_KINK_FRACTION * total as f64;
    verdict(
        1,
        max < FD_MAX_REL && secs < GRAD_RUNTIME_SECS && kink_ok,
        format!(
            "max rel err {max:.2e} < {FD_MAX_REL:e} in {secs:.1}s, {kinks}/{total} components at ReLU kinks [{}]",
            parts.join(", ")
        ),
    )
}

fn masks_pick(aux: &AuxSpec, inst: usize) -> FeatureMask {
    aux.masks[inst % aux.masks.len()].clone()
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in 1..=4usize {
        let configs = enumerate_configs(m).unwrap();
        ok &= configs.len() == (1 << m) - 1;
        let dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..40)).collect();
        let total: usize = dims.iter().sum();
        let all_on = DropConfig::all_on(m).unwrap();
        ok &= rescale_factor(&all_on, &dims).unwrap() == 1.0;
        let ones = vec![1.0; total];
        for c in &configs {
            let s: f64 = apply_mask(&ones, c, &dims).unwrap().iter().sum();
            ok &= (s - total as f64).abs() <= SD_SUM_TOL;
        }
        let dist = DropDistribution::uniform(&dims).unwrap();
        let expect = (1u64 << (m - 1)) as f64 / ((1u64 << m) - 1) as f64;
        for (i, p) in dist.marginal_on_prob().iter().enumerate() {
            let count = configs.iter().filter(|c| c.flags()[i]).count();
            ok &= count == 1 << (m - 1);
            ok &= *p == expect;
        }
        notes.push(format!("M={m}: {} configs", configs.len()));
    }
    verdict(2, ok, format!("{}; marginal(M=3) = 4/7", notes.join(", ")))
}

// ---------------------------------------------------------------- criterion 3

fn naf_structure(agent: &Agent, seed: u64) -> (f64, f64) {
    let Model::Naf(naf) = &agent.model else { panic!("not a NAF agent") };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = agent.state_dim();
    let n = NAF_PAIRS;
    let states = uniform(&mut rng, n * dim, 0.0, 1.0);
    let actions = uniform(&mut rng, n * 2, -1.0, 1.0);
    let pass = naf.online.forward(&states, n, &actions, vec![FeatureMask::Identity]).unwrap();
    let max_a = pass.out.a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mu = pass.out.mu.clone();
    let at_mu = naf.online.forward(&states, n, &mu, vec![FeatureMask::Identity]).unwrap();
    let max_abs = at_mu.out.a.iter().map(|a| a.abs()).fold(0.0, f64::max);
    (max_a, max_abs)
}

fn criterion_3(naf_dir: &Path, env: &EnvConfig) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in [Variant::MultiNaive, Variant::MultiSd] {
        let fresh = Agent::new(Algorithm::Naf, v, env, 64, 1e-4, 1e-3, &mut rng).unwrap();
        let (a, z) = naf_structure(&fresh, 30);
        ok &= a <= 0.0 && z < NAF_ZERO_TOL;
        notes.push(format!("untrained {v}: max A {a:.2e}, max |A(mu)| {z:.1e}"));
        let ck = Checkpoint::load(&cell_dir(naf_dir, v, SEEDS[0]).join(CHECKPOINT_FILE)).unwrap();
        let trained = load_agent(&ck, env).unwrap();
        let (a, z) = naf_structure(&trained, 31);
        ok &= a <= 0.0 && z < NAF_ZERO_TOL;
        notes.push(format!("trained {v}: max A {a:.2e}, max |A(mu)| {z:.1e}"));
    }
    verdict(3, ok, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(env: &EnvConfig) -> Verdict {
    let base = TrainConfig { episodes: EQUIV_EPISODES, seed: 4, aux_lambda: 0.0, ..TrainConfig::default() };
    let dims = [1usize; 3];
    let one_hot = DropDistribution::one_hot(&dims, 7).unwrap().probs().to_vec();
    let track = sdrl::env::TrackSpec::desk_oval();
    let mut naive = Trainer::new(TrainConfig { variant: Variant::MultiNaive, ..base.clone() }, track.clone(), env.clone()).unwrap();
    naive.run().unwrap();
    let sd_cfg = TrainConfig { variant: Variant::MultiSd, sd: SdChoice::Explicit(one_hot), ..base };
    let mut sd = Trainer::new(sd_cfg, track, env.clone()).unwrap();
    sd.run().unwrap();
    let same = curve_csv(&naive.curve) == curve_csv(&sd.curve);
    let last = naive.curve.last().map(|c| c.ret).unwrap_or(0.0);
    verdict(4, same, format!("{EQUIV_EPISODES} episodes, curves byte-identical: {same} (final return {last:.2})"))
}

// ---------------------------------------------------------------- criterion 5

fn base_config(algorithm: Algorithm, variants: Vec<Variant>, episodes: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(SEEDS[0]);
    cfg.seeds = SEEDS.to_vec();
    cfg.algorithm = algorithm;
    cfg.variants = variants;
    cfg.train.episodes = episodes;
    cfg.noise.sigma = NOISE_SIGMA;
    cfg
}

fn criterion_5() -> Verdict {
    let cfg = base_config(Algorithm::Ddpg, vec![Variant::UniPhysical], UNI_EPISODES);
    let out = scratch("uni");
    let mut passed = 0;
    let mut worst_secs = 0.0f64;
    let mut notes = Vec::new();
    for &seed in &SEEDS {
        let t0 = Instant::now();
        let t = train_cell(&cfg, Variant::UniPhysical, seed, &cell_dir(&out, Variant::UniPhysical, seed)).unwrap();
        worst_secs = worst_secs.max(t0.elapsed().as_secs_f64());
        let rets: Vec<f64> = t.curve.iter().map(|c| c.ret).collect();
        let first = rets[..10].iter().sum::<f64>() / 10.0;
        let last = rets[rets.len() - 10..].iter().sum::<f64>() / 10.0;
        if last >= LEARN_FACTOR * first {
            passed += 1;
        }
        notes.push(format!("seed {seed}: {first:.0} -> {last:.0}"));
    }
    let _ = std::fs::remove_dir_all(&out);
    verdict(
        5,
        passed >= LEARN_MIN_SEEDS && worst_secs <= LEARN_SECS_PER_SEED,
        format!("{passed}/5 seeds reach {LEARN_FACTOR}x, slowest seed {worst_secs:.0}s [{}]", notes.join(", ")),
    )
}

// ---------------------------------------------------------- criteria 6 to 10

/// Seed-mean of `metric` per variant, over seeds where every listed variant reports it.
struct Table {
    rows: BTreeMap<(String, u64), BTreeMap<String, f64>>,
}

impl Table {
    fn from_report(r: &sdrl::harness::MatrixReport) -> Self {
        let mut rows = BTreeMap::new();
        for c in &r.cells {
            if let Some(e) = &c.error {
                println!("  cell {} seed {} failed: {e}", c.variant, c.seed);
                continue;
            }
            rows.insert((c.variant.to_string(), c.seed), c.metrics.values.clone());
        }
        Self { rows }
    }

    /// Per-variant means over the seeds where all `variants` have `metric`.
    fn paired(&self, variants: &[Variant], metric: &str, f: impl Fn(f64) -> f64) -> Option<Vec<f64>> {
        let seeds: Vec<u64> = SEEDS
            .iter()
            .copied()
            .filter(|&s| variants.iter().all(|v| self.get(*v, s, metric).is_some()))
            .collect();
        if seeds.is_empty() {
            return None;
        }
        Some(
            variants
                .iter()
                .map(|&v| seeds.iter().map(|&s| f(self.get(v, s, metric).unwrap())).sum::<f64>() / seeds.len() as f64)
                .collect(),
        )
    }

    fn get(&self, v: Variant, seed: u64, metric: &str) -> Option<f64> {
        self.rows.get(&(v.to_string(), seed)).and_then(|m| m.get(metric)).copied()
    }

    fn seed_values(&self, v: Variant, metric: &str) -> Vec<String> {
        SEEDS.iter().map(|&s| self.get(v, s, metric).map_or("-".into(), |x| format!("{x:.3}"))).collect()
    }
}

const N: Variant = Variant::MultiNaive;
const D: Variant = Variant::MultiDropout;
const S: Variant = Variant::MultiSd;
const A: Variant = Variant::MultiSdAux;

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" / ")
}

fn criterion_6(t: &Table) -> Verdict {
    match t.paired(&[S, N], "mean_drop_pct", |x| x) {
        Some(m) => verdict(6, m[0] < m[1], format!("mean drop% sd / naive = {:.2} / {:.2}", m[0], m[1])),
        None => verdict(6, false, "no seed reported noise drops for both variants"),
    }
}

fn criterion_7(t: &Table) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    // Labels list sensors physical, laser, image: 110 drops the image, 101 the laser.
    for (label, required) in [("110", true), ("101", true), ("011", false)] {
        let key = format!("normalized_{label}");
        match t.paired(&[S, N, D], &key, |x| x) {
            Some(m) => {
                let good = m[0] >= m[1] && m[0] >= m[2];
                if required {
                    ok &= good;
                }
                notes.push(format!(
                    "{label}{} sd/naive/dropout {}",
                    if required { "" } else { " (info)" },
                    fmt(&m)
                ));
            }
            None => {
                ok &= !required;
                notes.push(format!("{label}: missing"));
            }
        }
    }
    let phys_mean = t.paired(&[S], "return_100", |x| x).map_or(f64::NAN, |m| m[0]);
    ok &= phys_mean > 0.0;
    notes.push(format!("sd physical-only mean return {phys_mean:.1}"));
    verdict(7, ok, notes.join("; "))
}

fn criterion_8(ddpg: &Table, naf: &Table) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, t) in [("ddpg", ddpg), ("naf", naf)] {
        match t.paired(&[S, N], "sensitivity", |x| (x - 1.0).abs()) {
            Some(m) => {
                ok &= m[0] < m[1];
                notes.push(format!(
                    "{name} |T-1| sd / naive = {:.3} / {:.3} (T sd [{}], naive [{}])",
                    m[0],
                    m[1],
                    t.seed_values(S, "sensitivity").join(" "),
                    t.seed_values(N, "sensitivity").join(" ")
                ));
            }
            None => {
                ok = false;
                notes.push(format!("{name}: no sensitivity values"));
            }
        }
    }
    verdict(8, ok, notes.join("; "))
}

fn criterion_9(t: &Table) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for dim in ["variance_steer", "variance_accel"] {
        match t.paired(&[A, S, N], dim, |x| x) {
            Some(m) => {
                ok &= m[0] < m[1] && m[1] < m[2];
                notes.push(format!("{dim} aux/sd/naive {}", m.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" / ")));
            }
            None => {
                ok = false;
                notes.push(format!("{dim}: missing"));
            }
        }
    }
    verdict(9, ok, notes.join("; "))
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
fn jacobi(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn pca_oracle() -> (bool, f64) {
    let mut worst = 0.0f64;
    for inst in 0..FD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst as u64);
        let n = 5;
        let b = uniform(&mut rng, n * n, -1.0, 1.0);
        // B^T B is symmetric positive semi-definite with distinct eigenvalues almost surely.
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum();
            }
        }
        let (vals, vecs) = jacobi(m.clone(), n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]));
        let pairs = top_eigenpairs(&m, n, n).unwrap();
        for (k, (lambda, vec)) in pairs.iter().enumerate() {
            let j = order[k];
            worst = worst.max((lambda - vals[j]).abs() / vals[order[0]]);
            let col: Vec<f64> = (0..n).map(|r| vecs[r * n + j]).collect();
            worst = worst.max(1.0 - dot(&col, vec).abs());
        }
        // Explained-variance fractions of pca_embed against the oracle spectrum of the covariance.
        let rows = 12;
        let data = uniform(&mut rng, rows * n, -1.0, 1.0);
        let p = pca_embed(&data, rows, n, 2).unwrap();
        let (cov, _) = sdrl::analysis::covariance(&data, rows, n).unwrap();
        let (cv, _) = jacobi(cov, n);
        let trace: f64 = cv.iter().sum();
        let mut sorted = cv.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        for k in 0..2 {
            worst = worst.max((p.fractions[k] - sorted[k] / trace).abs());
        }
    }
    (worst < PCA_TOL, worst)
}

fn criterion_10(t: &Table) -> Verdict {
    let (pca_ok, pca_err) = pca_oracle();
    let (ok, note) = match t.paired(&[N, S, A], "pc1_fraction", |x| x) {
        Some(m) => (m[0] > m[1] && m[1] > m[2], format!("PC1 fraction naive/sd/aux {}", fmt(&m))),
        None => (false, "no PC1 fractions".to_string()),
    };
    verdict(10, ok && pca_ok, format!("{note}; PCA vs Jacobi max err {pca_err:.1e} (tol {PCA_TOL:e})"))
}

// --------------------------------------------------------------- criterion 11

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.log") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_11() -> Verdict {
    // Resume: pause a run halfway, reload from bytes, finish, compare with the uninterrupted run.
    let env = EnvConfig { start: StartMode::Random, ..EnvConfig::default() };
    let track = sdrl::env::TrackSpec::desk_oval();
    let mut resume_ok = true;
    for v in [Variant::MultiSdAux, Variant::MultiDropout] {
        for alg in [Algorithm::Ddpg, Algorithm::Naf] {
            let cfg = TrainConfig { algorithm: alg, variant: v, episodes: 6, steps: 150, warmup: 200, seed: 11, ..TrainConfig::default() };
            let mut full = Trainer::new(cfg.clone(), track.clone(), env.clone()).unwrap();
            full.run().unwrap();
            let mut half = Trainer::new(cfg.clone(), track.clone(), env.clone()).unwrap();
            half.run_episodes(3).unwrap();
            let bytes = trainer_checkpoint(&half, true).to_bytes();
            drop(half);
            let mut resumed = resume_trainer(&Checkpoint::from_bytes(&bytes).unwrap(), cfg, track.clone(), env.clone()).unwrap();
            resumed.run().unwrap();
            resume_ok &= curve_csv(&full.curve) == curve_csv(&resumed.curve);
        }
    }
    // Rerun of a full seven-variant matrix at a reduced budget.
    let mut cfg = ExperimentConfig::with_seed(9);
    cfg.train.episodes = 3;
    cfg.train.steps = 80;
    cfg.train.warmup = 100;
    cfg.env.max_steps = 80;
    cfg.save_replay = true;
    cfg.analysis.state_episodes = 8;
    cfg.analysis.state_stride = 1;
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    let ra = run_matrix(&cfg, &a).unwrap();
    let rb = run_matrix(&cfg, &b).unwrap();
    let (fa, fb) = (tree_files(&a), tree_files(&b));
    let matrix_ok = ra.failures() == 0 && rb.failures() == 0 && fa == fb;
    let n_files = fa.len();
    let has_pca = fa.keys().any(|k| k.ends_with("pca.csv"));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
    verdict(
        11,
        resume_ok && matrix_ok,
        format!("resume bit-identical (DDPG+NAF, aux+dropout): {resume_ok}; matrix rerun {n_files} files byte-identical: {matrix_ok} (state reports present: {has_pca})"),
    )
}

// ----------------------------------------------------------------------- main

/// Criteria selected by `SDRL_ACCEPTANCE_ONLY` (comma-separated ids); all by default.
fn selected() -> Vec<usize> {
    match std::env::var("SDRL_ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        Err(_) => (1..=11).collect(),
    }
}

fn main() {
    let t0 = Instant::now();
    let want = selected();
    let on = |id: usize| want.contains(&id);
    let mut verdicts = Vec::new();
    let env = EnvConfig { start: StartMode::Random, ..EnvConfig::default() };
    if on(1) {
        verdicts.push(criterion_1());
    }
    if on(2) {
        verdicts.push(criterion_2());
    }
    if on(4) {
        verdicts.push(criterion_4(&env));
    }
    if on(11) {
        verdicts.push(criterion_11());
    }
    if on(5) {
        verdicts.push(criterion_5());
    }

    if [6, 7, 8, 9, 10].iter().any(|&i| on(i)) {
        println!("  [{:.0}s] training multi-sensor DDPG matrix", t0.elapsed().as_secs_f64());
        let dir = scratch("ddpg");
        let cfg = base_config(Algorithm::Ddpg, vec![N, D, S, A], MULTI_EPISODES);
        let t = Table::from_report(&run_matrix(&cfg, &dir).unwrap());
        let _ = std::fs::remove_dir_all(&dir);
        print_curves(&t, &[N, D, S, A]);
        let naf_t = if on(8) { Some(naf_matrix(t0, &env, on(3), &mut verdicts)) } else { None };
        if on(6) {
            verdicts.push(criterion_6(&t));
        }
        if on(7) {
            verdicts.push(criterion_7(&t));
        }
        if let Some(naf_t) = naf_t {
            verdicts.push(criterion_8(&t, &naf_t));
        }
        if on(9) {
            verdicts.push(criterion_9(&t));
        }
        if on(10) {
            verdicts.push(criterion_10(&t));
        }
    } else if on(3) {
        naf_matrix(t0, &env, true, &mut verdicts);
    }

    verdicts.sort_by_key(|v| v.id);
    println!("\nacceptance summary ({:.0}s)", t0.elapsed().as_secs_f64());
    for v in &verdicts {
        println!("  criterion {:>2}: {}", v.id, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Trains the NAF variants; runs criterion 3 on them when `check_structure`.
fn naf_matrix(t0: Instant, env: &EnvConfig, check_structure: bool, verdicts: &mut Vec<Verdict>) -> Table {
    println!("  [{:.0}s] training NAF matrix", t0.elapsed().as_secs_f64());
    let dir = scratch("naf");
    let cfg = base_config(Algorithm::Naf, vec![N, S], NAF_EPISODES);
    let t = Table::from_report(&run_matrix(&cfg, &dir).unwrap());
    print_curves(&t, &[N, S]);
    if check_structure {
        verdicts.push(criterion_3(&dir, env));
    }
    let _ = std::fs::remove_dir_all(&dir);
    t
}

fn print_curves(t: &Table, variants: &[Variant]) {
    for &v in variants {
        println!(
            "  {v}: last-10 return per seed [{}], clean [{}]",
            t.seed_values(v, "last10_return").join(" "),
            t.seed_values(v, "clean_return").join(" ")
        );
    }
}
