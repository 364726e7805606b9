use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selector_core::nn::{Model, ModelConfig, SelectorConfig};
use selector_core::removal::{remove_direct, remove_indirect, removal_reference};
use selector_core::scene::{CorpusIndex, DatasetConfig, InMemoryScenes};
use selector_core::selector::forward;
use selector_core::signal::mix_reference;
use selector_core::{ClassVector, Waveform};

fn f32_noise(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    let v = (0..len).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
    Waveform::new(v, 8000).unwrap()
}

#[test]
fn selection_plus_indirect_removal_is_the_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Model::new(ModelConfig::Selector(SelectorConfig::miniature(4)), 1).unwrap();
    for i in 0..20 {
        let y = f32_noise(100 + 37 * i, &mut rng);
        let o = ClassVector::one_hot(4, i % 4).unwrap();
        let sel = forward(&m, &y, &o).unwrap();
        let rem = remove_indirect(&m, &y, &o).unwrap();
        let back: Vec<u64> = sel.iter().zip(rem.iter()).map(|(a, b)| (a + b).to_bits()).collect();
        let orig: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
        assert_eq!(back, orig);
    }
}

#[test]
fn references_are_complementary_and_leave_background() {
    let corpus = CorpusIndex::synthetic(4, 8000).unwrap();
    let scenes = InMemoryScenes::generate(
        &corpus,
        &DatasetConfig {
            count: 5,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    for item in &scenes.items {
        let all = ClassVector::from_indices(4, &item.active_classes).unwrap();
        let rest = removal_reference(&item.mixture, &item.stems, &all).unwrap();
        for (a, b) in rest.iter().zip(item.background.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let o = ClassVector::one_hot(4, item.target_classes[0]).unwrap();
        let sel = mix_reference(&item.stems, &o).unwrap();
        let rem = removal_reference(&item.mixture, &item.stems, &o).unwrap();
        for ((s, r), y) in sel.iter().zip(rem.iter()).zip(item.mixture.iter()) {
            assert!((s + r - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn empty_selection_is_rejected_for_inference() {
    let m = Model::new(ModelConfig::Selector(SelectorConfig::miniature(3)), 1).unwrap();
    let y = Waveform::new(vec![0.1; 200], 8000).unwrap();
    assert!(remove_indirect(&m, &y, &ClassVector::zeros(3)).is_err());
    assert!(remove_direct(&m, &y, &ClassVector::one_hot(3, 0).unwrap()).is_err());
    let out = remove_indirect(&m, &y, &ClassVector::one_hot(3, 0).unwrap()).unwrap();
    assert_eq!(out.len(), 200);
    assert!(out.iter().all(|v| v.is_finite()));
}
