use attrprop::data::TriLabel;
use attrprop::eval::{balanced_accuracy, BinaryCounts};
use attrprop::relation::{predict_traits, train_relation, RelationTrainConfig, N_TRAITS, TRAITS};
use attrprop::synth::{gen_pairs, PairSynthConfig, PlantedRule};

// Traits linear in the concatenated features are within reach of the fused projection.
#[test]
fn planted_linear_rule_is_learned() {
    let all = gen_pairs(&PairSynthConfig {
        n_pairs: 900,
        d: 8,
        rule: PlantedRule::LinearFused,
        seed: 1,
        ..Default::default()
    })
    .unwrap()
    .pairs;
    let (train, test) = all.split_at(600);
    let cfg = RelationTrainConfig {
        fused_dim: 16,
        epochs: 100,
        learning_rate: 0.01,
        ..Default::default()
    };
    let model = train_relation(train, &cfg, 5).unwrap();
    let mut counts = [BinaryCounts::default(); N_TRAITS];
    for p in test {
        let probs = predict_traits(p, &model).unwrap();
        for t in 0..N_TRAITS {
            if let TriLabel::Positive | TriLabel::Negative = p.traits[t] {
                counts[t].add(probs[t] >= 0.5, p.traits[t] == TriLabel::Positive);
            }
        }
    }
    for (t, c) in counts.iter().enumerate() {
        let acc = balanced_accuracy(c).unwrap();
        assert!(acc >= 0.95, "{}: {acc}", TRAITS[t]);
    }
}
