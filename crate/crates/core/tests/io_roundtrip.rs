use std::collections::HashMap;

use attrprop::affinity::{build_graph, AffinityGraph};
use attrprop::classifiers::{train_bank, ClassifierBank, TrainConfig};
use attrprop::data::{Corpus, FaceBox, Sample, TriLabel};
use attrprop::relation::{read_pairs, write_pairs, RelationModel};
use attrprop::synth::{gen_corpus, gen_pairs, PairSynthConfig, SynthConfig};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = TriLabel> {
    prop_oneof![
        Just(TriLabel::Positive),
        Just(TriLabel::Negative),
        Just(TriLabel::Missing)
    ]
}

fn corpus() -> impl Strategy<Value = Corpus> {
    (1usize..6, 0usize..4, 1usize..20).prop_flat_map(|(d, attrs, n)| {
        let sample = (
            prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), d),
            prop::collection::vec(label(), attrs),
            0u8..3,
            prop::option::of((1.0f64..50.0, 1.0f64..50.0)),
        );
        prop::collection::vec(sample, n).prop_map(move |rows| {
            let samples = rows
                .into_iter()
                .enumerate()
                .map(|(i, (features, labels, src, bx))| Sample {
                    id: format!("n{i}"),
                    source: format!("src{src}"),
                    features,
                    labels,
                    face_box: bx.map(|(w, h)| FaceBox {
                        x: 1.5,
                        y: 2.25,
                        w,
                        h,
                        img_w: 100.0,
                        img_h: 80.0,
                    }),
                })
                .collect();
            Corpus::new((0..attrs).map(|a| format!("a{a}")).collect(), samples).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn corpus_survives_save_and_load(c in corpus()) {
        let dir = tempfile::tempdir().unwrap();
        c.save_dir(dir.path()).unwrap();
        let back = Corpus::load_dir(dir.path()).unwrap();
        prop_assert_eq!(back.attribute_ids(), c.attribute_ids());
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in c.samples().iter().zip(back.samples()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.source, &b.source);
            prop_assert_eq!(&a.labels, &b.labels);
            prop_assert_eq!(&a.face_box, &b.face_box);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.features), bits(&b.features));
        }
    }

    #[test]
    fn graph_survives_csv(seed in any::<u64>(), n in 3usize..30) {
        let mut rng = attrprop::math::rng_for(seed, 0);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
            .collect();
        let g = build_graph(&xs, 4.min(n - 1)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = AffinityGraph::read_csv(buf.as_slice(), n).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
    }
}

#[test]
fn bank_and_model_json_round_trip() {
    let pairs = gen_pairs(&PairSynthConfig {
        n_pairs: 40,
        d: 4,
        ..Default::default()
    })
    .unwrap();
    let c = gen_corpus(&SynthConfig {
        d: 4,
        n_per_source: 30,
        ..Default::default()
    })
    .unwrap()
    .corpus;
    let bank = train_bank(&c, &TrainConfig::default()).unwrap();
    let mut buf = Vec::new();
    bank.to_json(&mut buf).unwrap();
    assert_eq!(ClassifierBank::from_json(buf.as_slice()).unwrap(), bank);

    let model = RelationModel::init(4, 3, 9);
    let mut buf = Vec::new();
    model.to_json(&mut buf).unwrap();
    assert_eq!(RelationModel::from_json(buf.as_slice()).unwrap(), model);

    let mut buf = Vec::new();
    write_pairs(&pairs.pairs, &mut buf).unwrap();
    let back = read_pairs(buf.as_slice(), &pairs.faces).unwrap();
    assert_eq!(back, pairs.pairs);
    let by_id: HashMap<_, _> = back.iter().map(|p| (p.id.clone(), p)).collect();
    assert_eq!(by_id.len(), 40);
}
