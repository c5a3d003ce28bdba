use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::network::CnnModel;
use super::scalar::Scalar;
use crate::ingest::TileSet;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Draw every pseudo-cluster equally often within an epoch.
    pub balanced_sampling: bool,
    /// Weight of the newest batch in the batchnorm running statistics.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 64,
            balanced_sampling: true,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and freezes the weights.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be finite and >= 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("batchnorm momentum {} outside [0, 1]", self.bn_momentum));
        }
        Ok(())
    }
}

/// SGD with momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − η·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    /// Drops the momentum of the given parameter slots, e.g. after the head
    /// has been reinitialized.
    pub fn forget(&mut self, slots: &[usize]) {
        for &s in slots {
            if let Some(v) = self.velocity.get_mut(s) {
                v.clear();
            }
        }
    }

    pub fn step(&mut self, model: &mut CnnModel<T>, grads: &[Vec<T>], cfg: &TrainConfig) {
        let params = model.params_mut();
        self.velocity.resize_with(params.len(), Vec::new);
        let (lr, mu, wd) = (T::of(cfg.learning_rate), T::of(cfg.momentum), T::of(cfg.weight_decay));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if v.len() != p.data.len() {
                *v = vec![T::zero(); p.data.len()];
            }
            for ((w, &g), v) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
    }
}

impl<T: Scalar> CnnModel<T> {
    /// One SGD step on a batch; returns the loss before the update.
    pub fn train_step(&mut self, sgd: &mut Sgd<T>, input: &[f32], labels: &[u32], cfg: &TrainConfig) -> Result<f64> {
        cfg.validate()?;
        let (loss, grads, stats) = self.grads_with_stats(input, labels)?;
        self.update_running(&stats, cfg.bn_momentum);
        sgd.step(self, &grads, cfg);
        Ok(loss)
    }

    /// One pass over the tiles with the given labels; returns the
    /// sample-weighted mean loss.
    pub fn train_epoch(&mut self, sgd: &mut Sgd<T>, tiles: &TileSet, labels: &[u32], cfg: &TrainConfig, seed: u64) -> Result<f64> {
        cfg.validate()?;
        if labels.len() != tiles.len() {
            return Err(Error::Shape(format!("{} labels for {} tiles", labels.len(), tiles.len())));
        }
        if tiles.is_empty() {
            return Err(Error::EmptySet("no tiles to train on".into()));
        }
        let order = if cfg.balanced_sampling {
            balanced_order(labels, seed)
        } else {
            let mut o: Vec<usize> = (0..labels.len()).collect();
            o.shuffle(&mut rng::seeded(seed));
            o
        };
        let mut total = 0.0;
        let mut input = Vec::new();
        let mut batch_labels = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            input.clear();
            batch_labels.clear();
            for &i in chunk {
                input.extend_from_slice(&tiles.tiles()[i].pixels);
                batch_labels.push(labels[i]);
            }
            total += self.train_step(sgd, &input, &batch_labels, cfg)? * chunk.len() as f64;
        }
        Ok(total / order.len() as f64)
    }
}

/// Sample order in which every non-empty label is drawn about equally often:
/// `n / clusters + 1` draws per label (with replacement only when the label
/// has fewer members than that), shuffled and cut to `n`.
pub fn balanced_order(labels: &[u32], seed: u64) -> Vec<usize> {
    let n = labels.len();
    let mut r = rng::seeded(seed);
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.is_empty() {
        return Vec::new();
    }
    let per = n / groups.len() + 1;
    let mut order = Vec::with_capacity(per * groups.len());
    for members in groups.values() {
        if members.len() > per {
            order.extend(index::sample(&mut r, members.len(), per).iter().map(|j| members[j]));
        } else {
            order.extend((0..per).map(|_| members[r.random_range(0..members.len())]));
        }
    }
    order.shuffle(&mut r);
    order.truncate(n);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::arch::Architecture;

    #[test]
    fn balanced_order_evens_out_clusters() {
        let mut labels = vec![0u32; 90];
        labels.extend([1; 10]);
        let order = balanced_order(&labels, 3);
        assert_eq!(order.len(), 100);
        let ones = order.iter().filter(|&&i| labels[i] == 1).count();
        assert!((45..=55).contains(&ones), "{ones}");
        assert_eq!(order, balanced_order(&labels, 3));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let mut m = CnnModel::<f32>::new(Architecture::reduced(8, 8, 3).unwrap(), 0).unwrap();
        let x: Vec<f32> = (0..4 * 64).map(|i| ((i * 7) % 11) as f32 / 11.0).collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            bn_momentum: 0.0,
            ..Default::default()
        };
        let before = m.params().to_vec();
        let mut sgd = Sgd::new();
        let l0 = m.train_step(&mut sgd, &x, &[0, 1, 2, 0], &cfg).unwrap();
        let l1 = m.train_step(&mut sgd, &x, &[0, 1, 2, 0], &cfg).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn memorizes_a_fixed_batch() {
        let mut m = CnnModel::<f32>::new(Architecture::reduced(16, 32, 8).unwrap(), 1).unwrap();
        let mut r = rng::seeded(5);
        let x: Vec<f32> = (0..8 * 256).map(|_| r.random::<f32>()).collect();
        let labels: Vec<u32> = (0..8).collect();
        let cfg = TrainConfig::default();
        let mut sgd = Sgd::new();
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = m.train_step(&mut sgd, &x, &labels, &cfg).unwrap();
        }
        assert!(loss < 0.1, "{loss}");
    }
}
