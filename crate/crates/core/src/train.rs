//! Adam, cosine annealing, the `MADG` checkpoint format and the training loop.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::data::{augment, collate, rescale_batch, scaled_side, SampleRecord, MULTI_SCALE};
use crate::error::{Error, Result};
use crate::losses::total_loss;
use crate::metrics::{evaluate_dataset, MetricParams, MetricReport};
use crate::network::Madgnet;
use crate::tensor::{ParamStore, Shape, Tape, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients held in `store`, each multiplied by
    /// `grad_scale` first.
    pub fn update(&mut self, store: &mut ParamStore, lr: f64, grad_scale: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in store.values_and_grads_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Contract(format!(
                    "parameter shape {} drifted from optimizer state {}",
                    p.shape(),
                    m.shape()
                )));
            }
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let gi = gd[i] * grad_scale;
                let mi = &mut m.data_mut()[i];
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                let mhat = *mi / c1;
                let vi = &mut v.data_mut()[i];
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let vhat = *vi / c2;
                pd[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// `lr_min + (lr_max - lr_min)(1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || epoch > total {
        return Err(Error::Contract(format!("cosine_lr needs 0 <= epoch <= total, total > 0; got {epoch}/{total}")));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// Global L2 norm of all gradients in the store.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .ids()
        .map(|id| store.grad(id).data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

const MAGIC: &[u8; 4] = b"MADG";
const VERSION: u32 = 1;

/// One named float64 array of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat list of named arrays. Parameters live under `param/`, optimizer
/// moments under `adam/`, the config text (one byte per element) under
/// `config`, and the RNG state as 32-bit words under `rng/`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

fn words(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks(4)
        .map(|c| f64::from(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect()
}

fn unwords(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&w| (w as u32).to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.into(),
            dims,
            data,
        });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        let s = t.shape();
        self.push(name, vec![s.n, s.c, s.h, s.w], t.data().to_vec());
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::State(format!("checkpoint has no entry {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.get(name)?;
        if e.dims.len() != 4 {
            return Err(Error::State(format!("entry {name:?} has rank {}, expected 4", e.dims.len())));
        }
        Tensor::from_vec(Shape::new(e.dims[0], e.dims[1], e.dims[2], e.dims[3]), e.data.clone())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let e = self.get(name)?;
        match e.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::State(format!("entry {name:?} is not a scalar"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse; `Err((offset, message))` on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, (usize, String)> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> std::result::Result<&[u8], (usize, String)> {
            if bytes.len() - pos < n {
                return Err((pos, format!("truncated {what}")));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4, "magic")? != MAGIC {
            return Err((0, "not a MADG checkpoint".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4, "version")?);
        if version != VERSION {
            return Err((4, format!("unsupported checkpoint version {version}")));
        }
        let count = u32_at(take(4, "entry count")?);
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let len = u32_at(take(4, "name length")?) as usize;
            let name = std::str::from_utf8(take(len, "name")?)
                .map_err(|_| (0, "entry name is not UTF-8".to_string()))?
                .to_string();
            let rank = u32_at(take(4, "rank")?) as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32_at(take(4, "dims")?) as usize);
            }
            let n: usize = dims.iter().product();
            let payload = take(n.checked_mul(8).ok_or((0, "entry too large".to_string()))?, "payload")?;
            let data = payload
                .chunks(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ck.entries.push(Entry { name, dims, data });
        }
        if take(1, "").is_ok() {
            return Err((bytes.len(), "trailing bytes after last entry".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|(offset, msg)| Error::Parse {
            path: path.to_path_buf(),
            offset,
            msg,
        })
    }

    pub fn config(&self) -> Result<Config> {
        let e = self.get("config")?;
        let text = String::from_utf8(e.data.iter().map(|&b| b as u8).collect())
            .map_err(|_| Error::State("config entry is not UTF-8".into()))?;
        Config::parse(&text)
    }

    /// Rebuild the network and its weights.
    pub fn model(&self) -> Result<(Config, Madgnet, ParamStore)> {
        let cfg = self.config()?;
        let (net, mut store) = Madgnet::init(&cfg.network, 0)?;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = self.tensor(&format!("param/{}", store.name(id)))?;
            store.set(id, t).map_err(|e| Error::State(e.to_string()))?;
        }
        net.check_store(&store)?;
        Ok((cfg, net, store))
    }
}

/// One loss-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

impl LogRow {
    pub fn line(&self) -> String {
        format!("{}\t{}\t{:?}\t{:?}", self.epoch, self.step, self.lr, self.loss)
    }
}

/// Everything needed to continue training bit-exactly.
pub struct Trainer {
    pub cfg: Config,
    pub net: Madgnet,
    pub store: ParamStore,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    /// Weights from `train.seed`; the data RNG runs on a separate stream.
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let (net, store) = Madgnet::init(&cfg.network, cfg.train.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(1);
        Ok(Trainer {
            adam: Adam::new(&store),
            cfg,
            net,
            store,
            rng,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (cfg, net, store) = ck.model()?;
        let mut adam = Adam::new(&store);
        adam.step = ck.scalar("adam/step")? as u64;
        for (i, id) in store.ids().enumerate() {
            let name = store.name(id);
            adam.m[i] = ck.tensor(&format!("adam/m/{name}"))?;
            adam.v[i] = ck.tensor(&format!("adam/v/{name}"))?;
        }
        let seed: [u8; 32] = unwords(&ck.get("rng/seed")?.data)
            .try_into()
            .map_err(|_| Error::State("rng/seed must hold 8 words".into()))?;
        let stream = unwords(&ck.get("rng/stream")?.data);
        let pos = unwords(&ck.get("rng/word_pos")?.data);
        if stream.len() != 8 || pos.len() != 16 {
            return Err(Error::State("malformed rng state".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(u64::from_le_bytes(stream.try_into().expect("8 bytes")));
        rng.set_word_pos(u128::from_le_bytes(pos.try_into().expect("16 bytes")));
        Ok(Trainer {
            epoch: ck.scalar("train/epoch")? as usize,
            cfg,
            net,
            store,
            adam,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let text = self.cfg.to_ini();
        ck.push("config", vec![text.len()], text.bytes().map(f64::from).collect());
        for (name, t) in self.store.iter() {
            ck.push_tensor(format!("param/{name}"), t);
        }
        ck.push("adam/step", vec![], vec![self.adam.step as f64]);
        for (i, (name, _)) in self.store.iter().enumerate() {
            ck.push_tensor(format!("adam/m/{name}"), &self.adam.m[i]);
            ck.push_tensor(format!("adam/v/{name}"), &self.adam.v[i]);
        }
        ck.push("rng/seed", vec![8], words(&self.rng.get_seed()));
        ck.push("rng/stream", vec![2], words(&self.rng.get_stream().to_le_bytes()));
        ck.push("rng/word_pos", vec![4], words(&self.rng.get_word_pos().to_le_bytes()));
        ck.push("train/epoch", vec![], vec![self.epoch as f64]);
        ck
    }

    /// One pass over `data`; calls `log` once per optimizer step.
    pub fn train_epoch(&mut self, data: &[SampleRecord], log: &mut dyn FnMut(&LogRow) -> Result<()>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let t = &self.cfg.train;
        let lr = cosine_lr(self.epoch.min(t.epochs), t.epochs.max(1), t.lr_max, t.lr_min)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let batches: Vec<&[usize]> = order.chunks(t.batch_size).collect();
        for chunk in &batches {
            let augmented: Vec<SampleRecord> = chunk
                .iter()
                .map(|&i| augment(&data[i], &mut self.rng, &self.cfg.data.augment))
                .collect();
            let refs: Vec<&SampleRecord> = augmented.iter().collect();
            let (mut x, mut gt) = collate(&refs)?;
            if self.cfg.data.multi_scale {
                let f = MULTI_SCALE[self.rng.gen_range(0..MULTI_SCALE.len())];
                let s = x.shape();
                (x, gt) = rescale_batch(&x, &gt.region, scaled_side(s.h, f), scaled_side(s.w, f))?;
            }
            let tape = Tape::new();
            let bound = self.store.bind(&tape);
            let stages = self.net.forward(tape.constant(x), &bound)?;
            let gts = vec![gt; self.cfg.network.labels];
            let loss = total_loss(&stages, &gts, &self.cfg.train.loss)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.adam.step as usize + 1,
                    batch: augmented.iter().map(|s| s.id.clone()).collect(),
                });
            }
            tape.backward(loss)?;
            self.store.zero_grad();
            self.store.accumulate_grads(&bound)?;
            let scale = match self.cfg.train.grad_clip {
                Some(c) => {
                    let n = grad_norm(&self.store);
                    if n > c {
                        c / n
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            self.adam.update(&mut self.store, lr, scale)?;
            total += value;
            log(&LogRow {
                epoch: self.epoch,
                step: self.adam.step,
                lr,
                loss: value,
            })?;
        }
        self.epoch += 1;
        Ok(total / batches.len() as f64)
    }

    /// Train until `train.epochs`, appending to `log_path` and writing
    /// `ckpt_path` every `checkpoint_every` epochs and at the end.
    pub fn run(&mut self, data: &[SampleRecord], log_path: Option<&Path>, ckpt_path: Option<&Path>) -> Result<Vec<LogRow>> {
        let mut file = match log_path {
            Some(p) => Some({
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?
            }),
            None => None,
        };
        let mut rows = Vec::new();
        while self.epoch < self.cfg.train.epochs {
            let mean = self.train_epoch(data, &mut |row| {
                rows.push(*row);
                if let (Some(f), Some(p)) = (file.as_mut(), log_path) {
                    writeln!(f, "{}", row.line()).map_err(|e| Error::io(p, e))?;
                }
                Ok(())
            })?;
            log::info!("epoch {} mean loss {mean:.6}", self.epoch);
            let every = self.cfg.train.checkpoint_every;
            if let Some(p) = ckpt_path {
                if every > 0 && self.epoch % every == 0 && self.epoch < self.cfg.train.epochs {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if let Some(p) = ckpt_path {
            self.checkpoint().save(p)?;
        }
        Ok(rows)
    }
}

/// Last-stage core probabilities for each record, in batches of `batch`.
pub fn predict(net: &Madgnet, store: &ParamStore, records: &[SampleRecord], batch: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch.max(1)) {
        let x = Tensor::stack_batch(&chunk.iter().map(|r| r.image.clone()).collect::<Vec<_>>())?;
        let probs = net.probabilities(store, &x)?;
        let p = &probs[0];
        for i in 0..chunk.len() {
            out.push(p.slice_batch(i, i + 1)?);
        }
    }
    Ok(out)
}

/// Six-metric report of the first label over `records`.
pub fn evaluate(net: &Madgnet, store: &ParamStore, records: &[SampleRecord]) -> Result<MetricReport> {
    let probs = predict(net, store, records, 16)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let gts: Vec<Tensor> = records.iter().map(|r| r.gt.region.clone()).collect();
    evaluate_dataset(&ids, &probs, &gts, &MetricParams::default())
}
