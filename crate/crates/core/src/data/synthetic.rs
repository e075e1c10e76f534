use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Bag, BagId, Dataset, Instance, InstanceId, Origin, Proportion, SourceId};
use crate::error::{Error, Result};

/// Isotropic Gaussian for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGenerator {
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// Recipe for a Gaussian-mixture dataset with proportion-labeled bags.
///
/// Every source (a labeled source, a bag, or an evaluation source) receives
/// its own random offset of standard deviation `source_shift`, which models
/// appearance differences between images. On top of that, bags and
/// evaluation instances share one offset of standard deviation
/// `domain_shift`: the labeled instances come from a different population
/// than the data the model is meant for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Explicit class generators; drawn at random from `mean_separation` and
    /// `noise_scale` when absent.
    pub class_generators: Option<Vec<ClassGenerator>>,
    pub mean_separation: f64,
    pub noise_scale: f64,
    pub source_shift: f64,
    pub domain_shift: f64,
    pub bag_count: usize,
    /// Inclusive range of instances per bag.
    pub instances_per_bag: (usize, usize),
    /// Symmetric Dirichlet concentration for bag proportions.
    pub dirichlet_concentration: f64,
    /// Overrides the Dirichlet draw for every bag.
    pub fixed_proportion: Option<Vec<f64>>,
    /// Every bag contains every class at least once.
    pub require_all_classes: bool,
    pub supervised_count: usize,
    pub supervised_sources: usize,
    pub eval_count: usize,
    pub eval_sources: usize,
    /// Fraction of supervised labels flipped to a different class.
    pub label_noise: f64,
    /// Half-width of uniform noise added to each stored bag proportion
    /// before renormalizing; zero keeps exact proportions.
    pub proportion_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 16,
            class_generators: None,
            mean_separation: 3.0,
            noise_scale: 1.0,
            source_shift: 0.15,
            domain_shift: 0.5,
            bag_count: 20,
            instances_per_bag: (200, 200),
            dirichlet_concentration: 1.0,
            fixed_proportion: None,
            require_all_classes: false,
            supervised_count: 100,
            supervised_sources: 10,
            eval_count: 1000,
            eval_sources: 10,
            label_noise: 0.0,
            proportion_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("classes = {} (need >= 2)", self.classes));
        }
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if self.supervised_count < self.classes {
            return fail(format!(
                "supervised_count {} below class count {}",
                self.supervised_count, self.classes
            ));
        }
        if self.supervised_sources == 0 || self.supervised_sources > self.supervised_count {
            return fail(format!(
                "supervised_sources must be in [1, {}]",
                self.supervised_count
            ));
        }
        if self.eval_count > 0 && self.eval_sources == 0 {
            return fail("eval_sources must be positive when eval_count > 0".into());
        }
        let (lo, hi) = self.instances_per_bag;
        if lo == 0 || lo > hi {
            return fail(format!("instances_per_bag range ({lo}, {hi}) is empty"));
        }
        if self.require_all_classes && lo < self.classes {
            return fail(format!(
                "bags of {lo} instances cannot contain all {} classes",
                self.classes
            ));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0, 1)", self.label_noise));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return fail("dirichlet_concentration must be positive".into());
        }
        if !(self.proportion_jitter >= 0.0 && self.source_shift >= 0.0 && self.domain_shift >= 0.0) {
            return fail("proportion_jitter, source_shift and domain_shift must be non-negative".into());
        }
        if let Some(p) = &self.fixed_proportion {
            if p.len() != self.classes {
                return fail("fixed_proportion length differs from classes".into());
            }
            Proportion::new(p.clone()).map_err(|e| Error::Config(e.to_string()))?;
            if self.require_all_classes && p.contains(&0.0) {
                return fail("fixed_proportion has a zero class but all classes are required".into());
            }
        }
        if let Some(gens) = &self.class_generators {
            if gens.len() != self.classes
                || gens.iter().any(|g| g.mean.len() != self.dim || !(g.scale > 0.0))
            {
                return fail("class_generators must give one mean of length dim and a positive scale per class".into());
            }
        } else if !(self.noise_scale > 0.0) {
            return fail("noise_scale must be positive".into());
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn draw_proportion(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if let Some(p) = &spec.fixed_proportion {
        return p.clone();
    }
    let gamma = Gamma::new(spec.dirichlet_concentration, 1.0).expect("validated concentration");
    loop {
        let draws: Vec<f64> = (0..spec.classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

fn sample_class(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Generates supervised instances, proportion-labeled bags and a held-out
/// evaluation set. Bags store the exact empirical class ratio of their
/// members unless `proportion_jitter` is set.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.classes, spec.dim);

    let generators = match &spec.class_generators {
        Some(g) => g.clone(),
        None => {
            // Pairwise mean distances come out near `mean_separation`.
            let s = spec.mean_separation / (2.0 * d as f64).sqrt();
            (0..c)
                .map(|_| ClassGenerator {
                    mean: gaussian_vec(&mut rng, d, s),
                    scale: spec.noise_scale,
                })
                .collect()
        }
    };

    let target_offset = gaussian_vec(&mut rng, d, spec.domain_shift);
    let shifted = |mut v: Vec<f64>| {
        for (x, t) in v.iter_mut().zip(&target_offset) {
            *x += t;
        }
        v
    };

    let mut next_id = 0u64;
    let mut make = |rng: &mut ChaCha8Rng, origin, class: usize, offset: &[f64]| {
        let g = &generators[class];
        let features = g
            .mean
            .iter()
            .zip(offset)
            .map(|(m, o)| m + o + g.scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let inst = Instance {
            id: InstanceId(next_id),
            origin,
            features,
            true_class: Some(class),
        };
        next_id += 1;
        inst
    };

    let mut instances = Vec::new();

    // Supervised: classes cycle so every class appears, spread over sources.
    let offsets: Vec<Vec<f64>> = (0..spec.supervised_sources)
        .map(|_| gaussian_vec(&mut rng, d, spec.source_shift))
        .collect();
    let mut classes: Vec<usize> = (0..spec.supervised_count).map(|i| i % c).collect();
    classes.shuffle(&mut rng);
    let flips = (spec.label_noise * spec.supervised_count as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.supervised_count).collect();
    order.shuffle(&mut rng);
    let flipped: Vec<usize> = order[..flips].to_vec();
    let first_supervised = instances.len();
    for (i, &class) in classes.iter().enumerate() {
        let source = i % spec.supervised_sources;
        instances.push(make(
            &mut rng,
            Origin::Supervised(SourceId(source as u64)),
            class,
            &offsets[source],
        ));
    }
    for i in flipped {
        let inst = &mut instances[first_supervised + i];
        let truth = inst.true_class.expect("supervised has class");
        let other = (truth + rng.random_range(1..c)) % c;
        inst.true_class = Some(other);
    }

    let mut bags = Vec::with_capacity(spec.bag_count);
    for b in 0..spec.bag_count {
        let bag_id = BagId(b as u64);
        let offset = shifted(gaussian_vec(&mut rng, d, spec.source_shift));
        let weights = draw_proportion(spec, &mut rng);
        let n = rng.random_range(spec.instances_per_bag.0..=spec.instances_per_bag.1);
        let mut members: Vec<usize> = if spec.require_all_classes {
            (0..c).collect()
        } else {
            Vec::new()
        };
        while members.len() < n {
            members.push(sample_class(&weights, &mut rng));
        }
        members.shuffle(&mut rng);
        let mut counts = vec![0usize; c];
        let mut ids = Vec::with_capacity(n);
        for class in members {
            counts[class] += 1;
            let inst = make(&mut rng, Origin::Bag(bag_id), class, &offset);
            ids.push(inst.id);
            instances.push(inst);
        }
        let mut tcr = Proportion::from_counts(&counts)?;
        if spec.proportion_jitter > 0.0 {
            let j = spec.proportion_jitter;
            let noisy: Vec<f64> = tcr
                .values()
                .iter()
                .map(|v| (v + rng.random_range(-j..=j)).max(0.0))
                .collect();
            let total: f64 = noisy.iter().sum();
            if total > 0.0 {
                tcr = Proportion::new(noisy.iter().map(|v| v / total).collect())?;
            }
        }
        bags.push(Bag::new(bag_id, ids, tcr)?);
    }

    if spec.eval_count > 0 {
        let offsets: Vec<Vec<f64>> = (0..spec.eval_sources)
            .map(|_| shifted(gaussian_vec(&mut rng, d, spec.source_shift)))
            .collect();
        for i in 0..spec.eval_count {
            let class = i % c;
            instances.push(make(&mut rng, Origin::Eval, class, &offsets[i % spec.eval_sources]));
        }
    }

    Dataset::new(c, d, instances, bags)
}
