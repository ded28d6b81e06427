//! Binary checkpoints: magic `SDRL`, u32 version, length-prefixed metadata
//! text, u32 record count, then named little-endian f64 arrays
//! (`u32 name length, name, u32 ndim, u64 dims, data`).

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvConfig, TrackSpec};
use crate::error::{Error, Result};
use crate::rl::train::TrainRngs;
use crate::rl::{Agent, CurveRow, ReplayBuffer, TrainConfig, Trainer, Transition};

pub const MAGIC: &[u8; 4] = b"SDRL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { name: name.into(), shape, data }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub records: Vec<Record>,
}

fn ck_err(record: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint { record: record.to_string(), msg: msg.into() }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, record: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(ck_err(record, format!("truncated: needed {n} more bytes at offset {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, record)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, record: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, record)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| ck_err(name, "record missing"))
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ck_err("meta", format!("missing key `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, at: 0 };
        if rd.take(4, "header")? != MAGIC {
            return Err(ck_err("header", "bad magic bytes (not an SDRL checkpoint)"));
        }
        let version = rd.u32("header")?;
        if version != VERSION {
            return Err(ck_err("header", format!("unsupported version {version}, expected {VERSION}")));
        }
        let meta_len = rd.u32("meta")? as usize;
        let meta_text = std::str::from_utf8(rd.take(meta_len, "meta")?)
            .map_err(|_| ck_err("meta", "metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| ck_err("meta", format!("bad line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = rd.u32("header")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let placeholder = format!("#{i}");
            let name_len = rd.u32(&placeholder)? as usize;
            let name = std::str::from_utf8(rd.take(name_len, &placeholder)?)
                .map_err(|_| ck_err(&placeholder, "record name is not UTF-8"))?
                .to_string();
            let ndim = rd.u32(&name)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(rd.u64(&name)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ck_err(&name, "shape overflows"))?;
            let raw = rd.take(n.checked_mul(8).ok_or_else(|| ck_err(&name, "shape overflows"))?, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            records.push(Record { name, shape, data });
        }
        if rd.at != bytes.len() {
            return Err(ck_err("trailer", format!("{} unexpected trailing bytes", bytes.len() - rd.at)));
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Splits a u64 into two exactly representable f64 halves.
fn u64_words(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xFFFF_FFFF) as f64]
}

fn words_u64(w: &[f64], record: &str) -> Result<u64> {
    let ok = |x: f64| x >= 0.0 && x <= u32::MAX as f64 && x.fract() == 0.0;
    if w.len() != 2 || !ok(w[0]) || !ok(w[1]) {
        return Err(ck_err(record, "corrupt integer encoding"));
    }
    Ok(((w[0] as u64) << 32) | w[1] as u64)
}

fn rng_record(name: &str, rng: &ChaCha8Rng) -> Record {
    let mut data = Vec::with_capacity(14);
    for c in rng.get_seed().chunks_exact(8) {
        data.extend(u64_words(u64::from_le_bytes(c.try_into().expect("8 bytes"))));
    }
    data.extend(u64_words(rng.get_stream()));
    let pos = rng.get_word_pos();
    data.extend(u64_words((pos >> 64) as u64));
    data.extend(u64_words(pos as u64));
    Record::new(name, vec![14], data)
}

fn rng_from(ck: &Checkpoint, name: &str) -> Result<ChaCha8Rng> {
    let r = expect_shape(ck, name, &[14])?;
    let mut seed = [0u8; 32];
    for (i, c) in seed.chunks_exact_mut(8).enumerate() {
        c.copy_from_slice(&words_u64(&r.data[2 * i..2 * i + 2], name)?.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words_u64(&r.data[8..10], name)?);
    let hi = words_u64(&r.data[10..12], name)? as u128;
    let lo = words_u64(&r.data[12..14], name)? as u128;
    rng.set_word_pos((hi << 64) | lo);
    Ok(rng)
}

fn expect_shape<'a>(ck: &'a Checkpoint, name: &str, shape: &[usize]) -> Result<&'a Record> {
    let r = ck.get(name)?;
    if r.shape != shape {
        return Err(ck_err(name, format!("shape mismatch: expected {shape:?}, found {:?}", r.shape)));
    }
    Ok(r)
}

/// Parameters and optimizer moments of an agent.
pub fn agent_records(agent: &Agent) -> Vec<Record> {
    let mut out = Vec::new();
    for (net_name, net) in agent.named_nets() {
        for (p, shape, range) in net.param_layout() {
            out.push(Record::new(format!("{net_name}.{p}"), shape, net.params()[range].to_vec()));
        }
    }
    for (opt_name, opt) in agent.optimizers() {
        for (i, st) in opt.states.iter().enumerate() {
            out.push(Record::new(format!("{opt_name}.{i}.m"), vec![st.m.len()], st.m.clone()));
            out.push(Record::new(format!("{opt_name}.{i}.v"), vec![st.v.len()], st.v.clone()));
            out.push(Record::new(format!("{opt_name}.{i}.t"), vec![2], u64_words(st.t).to_vec()));
        }
    }
    out
}

/// Overwrites an agent's parameters and optimizer moments, verifying every shape.
pub fn restore_agent(agent: &mut Agent, ck: &Checkpoint) -> Result<()> {
    let layouts: Vec<(String, Vec<(String, Vec<usize>, std::ops::Range<usize>)>)> = agent
        .named_nets()
        .into_iter()
        .map(|(n, net)| (n, net.param_layout()))
        .collect();
    // Check everything before touching the agent so a failure leaves it intact.
    for (net_name, layout) in &layouts {
        for (p, shape, _) in layout {
            expect_shape(ck, &format!("{net_name}.{p}"), shape)?;
        }
    }
    for (opt_name, opt) in agent.optimizers() {
        for (i, st) in opt.states.iter().enumerate() {
            expect_shape(ck, &format!("{opt_name}.{i}.m"), &[st.m.len()])?;
            expect_shape(ck, &format!("{opt_name}.{i}.v"), &[st.v.len()])?;
            let t = expect_shape(ck, &format!("{opt_name}.{i}.t"), &[2])?;
            words_u64(&t.data, &t.name)?;
        }
    }
    for ((net_name, layout), net) in layouts.iter().zip(agent.nets_mut()) {
        let params = net.params_mut();
        for (p, _, range) in layout {
            params[range.clone()].copy_from_slice(&ck.get(&format!("{net_name}.{p}"))?.data);
        }
    }
    for (opt_name, opt) in agent.optimizers_mut() {
        for (i, st) in opt.states.iter_mut().enumerate() {
            st.m.copy_from_slice(&ck.get(&format!("{opt_name}.{i}.m"))?.data);
            st.v.copy_from_slice(&ck.get(&format!("{opt_name}.{i}.v"))?.data);
            let name = format!("{opt_name}.{i}.t");
            st.t = words_u64(&ck.get(&name)?.data, &name)?;
        }
    }
    Ok(())
}

fn agent_meta(agent: &Agent, ck: &mut Checkpoint) {
    ck.meta.insert("algorithm".into(), agent.algorithm.to_string());
    ck.meta.insert("variant".into(), agent.variant.to_string());
    ck.meta.insert("hidden".into(), agent.hidden.to_string());
    let dims: Vec<String> = agent.layout.raw_dims.iter().map(usize::to_string).collect();
    ck.meta.insert("sensor_dims".into(), dims.join(","));
}

pub fn agent_checkpoint(agent: &Agent) -> Checkpoint {
    let mut ck = Checkpoint::default();
    agent_meta(agent, &mut ck);
    ck.records = agent_records(agent);
    ck
}

/// Rebuilds an agent for `env` from checkpoint metadata and parameters.
pub fn load_agent(ck: &Checkpoint, env: &EnvConfig) -> Result<Agent> {
    let algorithm = ck.meta_value("algorithm")?.parse()?;
    let variant = ck.meta_value("variant")?.parse()?;
    let hidden: usize = ck
        .meta_value("hidden")?
        .parse()
        .map_err(|_| ck_err("meta", "bad `hidden`"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = Agent::new(algorithm, variant, env, hidden, 1e-4, 1e-3, &mut rng)?;
    restore_agent(&mut agent, ck)?;
    Ok(agent)
}

const CURVE_COLS: usize = 6;

/// Full training state. The replay buffer is included only when `with_replay`.
pub fn trainer_checkpoint(t: &Trainer, with_replay: bool) -> Checkpoint {
    let mut ck = agent_checkpoint(&t.agent);
    ck.meta.insert("seed".into(), t.cfg.seed.to_string());
    ck.meta.insert("episode".into(), t.episode.to_string());
    ck.meta.insert("total_steps".into(), t.total_steps.to_string());
    ck.meta.insert("replay".into(), u8::from(with_replay).to_string());
    for (name, rng) in [
        ("rng.ou", &t.rngs.ou),
        ("rng.replay", &t.rngs.replay),
        ("rng.sd", &t.rngs.sd),
        ("rng.dropout", &t.rngs.dropout),
    ] {
        ck.push(rng_record(name, rng));
    }
    ck.push(Record::new("ou.x", vec![2], t.ou.x.to_vec()));
    let mut curve = Vec::with_capacity(t.curve.len() * CURVE_COLS);
    for r in &t.curve {
        curve.extend([
            r.episode as f64,
            r.steps as f64,
            r.ret,
            r.bellman_loss.unwrap_or(f64::NAN),
            r.aux_loss.unwrap_or(f64::NAN),
            r.c_star_mode.map_or(-1.0, |c| c as f64),
        ]);
    }
    ck.push(Record::new("curve", vec![t.curve.len(), CURVE_COLS], curve));
    if with_replay {
        let n = t.replay.len();
        let d = t.agent.state_dim();
        let (mut s, mut a, mut r, mut s2, mut done) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for tr in t.replay.iter_fifo() {
            s.extend_from_slice(&tr.state);
            a.extend_from_slice(&tr.action);
            r.push(tr.reward);
            s2.extend_from_slice(&tr.next_state);
            done.push(if tr.done { 1.0 } else { 0.0 });
        }
        ck.push(Record::new("replay.states", vec![n, d], s));
        ck.push(Record::new("replay.actions", vec![n, 2], a));
        ck.push(Record::new("replay.rewards", vec![n], r));
        ck.push(Record::new("replay.next_states", vec![n, d], s2));
        ck.push(Record::new("replay.dones", vec![n], done));
    }
    ck
}

fn meta_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.meta_value(key)?
        .parse()
        .map_err(|_| ck_err("meta", format!("bad `{key}`")))
}

/// Rebuilds a trainer from `cfg` and the saved state; continuing it
/// reproduces the uninterrupted run exactly.
pub fn resume_trainer(ck: &Checkpoint, cfg: TrainConfig, track: TrackSpec, env: EnvConfig) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, track, env)?;
    for (key, want) in [
        ("algorithm", t.cfg.algorithm.to_string()),
        ("variant", t.cfg.variant.to_string()),
        ("seed", t.cfg.seed.to_string()),
        ("hidden", t.cfg.hidden.to_string()),
    ] {
        let got = ck.meta_value(key)?;
        if got != want {
            return Err(ck_err("meta", format!("checkpoint has {key}={got}, config has {want}")));
        }
    }
    if ck.meta_value("replay")? != "1" {
        return Err(ck_err("replay", "checkpoint was saved without its replay buffer; cannot resume"));
    }
    restore_agent(&mut t.agent, ck)?;
    t.rngs = TrainRngs {
        ou: rng_from(ck, "rng.ou")?,
        replay: rng_from(ck, "rng.replay")?,
        sd: rng_from(ck, "rng.sd")?,
        dropout: rng_from(ck, "rng.dropout")?,
    };
    let x = expect_shape(ck, "ou.x", &[2])?;
    t.ou.x = [x.data[0], x.data[1]];
    let curve = ck.get("curve")?;
    if curve.shape.len() != 2 || curve.shape[1] != CURVE_COLS {
        return Err(ck_err("curve", format!("shape mismatch: expected [_, {CURVE_COLS}], found {:?}", curve.shape)));
    }
    let opt = |v: f64| (!v.is_nan()).then_some(v);
    t.curve = curve
        .data
        .chunks_exact(CURVE_COLS)
        .map(|c| CurveRow {
            episode: c[0] as usize,
            steps: c[1] as usize,
            ret: c[2],
            bellman_loss: opt(c[3]),
            aux_loss: opt(c[4]),
            c_star_mode: (c[5] >= 0.0).then_some(c[5] as usize),
        })
        .collect();
    t.episode = meta_num(ck, "episode")?;
    t.total_steps = meta_num(ck, "total_steps")?;
    let d = t.agent.state_dim();
    let n = ck.get("replay.rewards")?.shape.first().copied().unwrap_or(0);
    let s = expect_shape(ck, "replay.states", &[n, d])?;
    let a = expect_shape(ck, "replay.actions", &[n, 2])?;
    let r = expect_shape(ck, "replay.rewards", &[n])?;
    let s2 = expect_shape(ck, "replay.next_states", &[n, d])?;
    let done = expect_shape(ck, "replay.dones", &[n])?;
    let items = (0..n)
        .map(|i| Transition {
            state: s.data[i * d..(i + 1) * d].to_vec(),
            action: [a.data[2 * i], a.data[2 * i + 1]],
            reward: r.data[i],
            next_state: s2.data[i * d..(i + 1) * d].to_vec(),
            done: done.data[i] != 0.0,
        })
        .collect();
    t.replay = ReplayBuffer::from_fifo(t.cfg.capacity, items)?;
    Ok(t)
}
