//! Small hand-built datasets shared by several test targets.

use npl_core::domain::{Bag, BagId, Dataset, Instance, InstanceId, Origin, Proportion, SourceId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn jitter(rng: &mut ChaCha8Rng, center: &[f64], scale: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Three classes. Labeled clusters for classes 0 and 1 sit left and right on
/// the first axis, class 2 far down the second axis. One bag of
/// `bag_size` instances sits between classes 0 and 1 (away from class 2),
/// yet its annotated ratio says every member is class 2. A third feature is
/// set only on bag members, so the model can move them without disturbing
/// the labeled clusters.
///
/// A "not class 0" label alone pushes these instances toward class 1 (the
/// runner-up), and "not class 1" pushes them back; only both negatives
/// together leave class 2.
pub fn oscillation_dataset_spread(seed: u64, bag_size: usize, spread: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[-2.0 * spread, 0.0, 0.0], [2.0 * spread, 0.0, 0.0], [0.0, -4.0 * spread, 0.0]];
    let mut instances = Vec::new();
    for i in 0..30u64 {
        let class = (i % 3) as usize;
        instances.push(Instance {
            id: InstanceId(i),
            origin: Origin::Supervised(SourceId(i % 5)),
            features: jitter(&mut rng, &centers[class], 0.3),
            true_class: Some(class),
        });
    }
    let mut ids = Vec::new();
    for k in 0..bag_size as u64 {
        let id = InstanceId(100 + k);
        let mut x = jitter(&mut rng, &[0.0, 1.5 * spread, 0.0], 0.2);
        x[2] = 1.0;
        instances.push(Instance {
            id,
            origin: Origin::Bag(BagId(0)),
            features: x,
            true_class: Some(2),
        });
        ids.push(id);
    }
    let bag = Bag::new(BagId(0), ids, Proportion::new(vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
    Dataset::new(3, 3, instances, vec![bag]).unwrap()
}

pub fn oscillation_dataset(seed: u64, bag_size: usize) -> Dataset {
    oscillation_dataset_spread(seed, bag_size, 1.0)
}

/// Iteration at which every member of the oscillation bag is first predicted
/// as class 2, or `None` if that never happens within six iterations.
///
/// Early stopping watches only the labeled validation loss, which negative
/// labels on the bag barely move (or worsen slightly, as they shift the
/// shared biases). Each phase therefore keeps only its first few epochs; a
/// larger bag and step size make those epochs count. The plateau rule is set
/// out of reach so the run is not cut short before the bag moves.
pub fn oscillation_reach(seed: u64, mode: npl_core::pipeline::NegativeMode) -> Option<usize> {
    use npl_core::model::{Architecture, Network, TrainConfig};
    use npl_core::pipeline::{run_pipeline, PipelineConfig};
    use npl_core::proportions::PositiveMode;

    let ds = oscillation_dataset(seed, 500);
    let supervised: Vec<&Instance> = ds.supervised().collect();
    let train = TrainConfig {
        seed,
        learning_rate: 0.05,
        max_epochs: 10,
        patience: 10,
        ..TrainConfig::default()
    };
    let pipeline = PipelineConfig {
        max_iterations: 6,
        plateau: 100,
        ..PipelineConfig::new(PositiveMode::Off, mode)
    };
    let model = Network::init(Architecture::linear(3, 3), seed);
    let outcome = run_pipeline(model, &ds, &supervised, &pipeline, &train).unwrap();
    outcome.reports.iter().position(|r| r.bags[0].pcr[2] == 1.0)
}
