use proptest::prelude::*;

use trnews::base_network::{init_embedding, init_network, BaseNetwork};
use trnews::config::RunConfig;
use trnews::corpus::{Domain, ReadEvent, ReadingHistory};
use trnews::evaluation::{rank_metrics, MetricsReport};
use trnews::numeric::{adam_step, checkpoint, AdamConfig, AdamState, Gradients, ParameterSet, Tensor};
use trnews::rng::stream;
use trnews::training::make_batches;
use trnews::translator::{init_translator, TransferStrategy, Translator, TranslatorSpec};

fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n)
}

fn network_params(seed: u64, dim: usize) -> ParameterSet {
    let mut r = stream(seed, "prop");
    let mut p = ParameterSet::new();
    init_embedding(&mut p, 8, dim, &mut r).unwrap();
    init_network(&mut p, Domain::Target, dim, &[6, 3], &mut r).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_a_distribution(seed in 0u64..1000, hist in (1usize..8).prop_flat_map(|n| vecs(n, 4)), cand in prop::collection::vec(-2.0f64..2.0, 4)) {
        let p = network_params(seed, 4);
        let net = BaseNetwork::new(&p, Domain::Target).unwrap();
        let a = net.attention_weights(&hist, &cand).unwrap();
        prop_assert_eq!(a.len(), hist.len());
        prop_assert!(a.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // The user vector lies in the box spanned by the history.
        let u = net.user_encode(&hist, &cand).unwrap();
        for k in 0..4 {
            let lo = hist.iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
            let hi = hist.iter().map(|h| h[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(u[k] >= lo - 1e-12 && u[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn predictions_are_probabilities(seed in 0u64..1000, u in prop::collection::vec(-5.0f64..5.0, 4), n in prop::collection::vec(-5.0f64..5.0, 4)) {
        let p = network_params(seed, 4);
        let y = BaseNetwork::new(&p, Domain::Target).unwrap().predict(&u, &n).unwrap();
        prop_assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn case_metrics_are_consistent(scores in prop::collection::vec(prop_oneof![(0u8..4).prop_map(f64::from), -1.0f64..1.0], 2..60)) {
        let ids: Vec<usize> = (0..scores.len()).rev().collect();
        let m = rank_metrics(&ids, &scores).unwrap();
        prop_assert!(m.rank >= 1 && m.rank <= scores.len());
        prop_assert!((0.0..=1.0).contains(&m.auc));
        prop_assert!(m.ndcg5 <= m.hr5 && m.ndcg10 <= m.hr10 && m.hr5 <= m.hr10);
        prop_assert!((m.mrr - 1.0 / m.rank as f64).abs() < 1e-15);
        let above = scores[1..].iter().filter(|&&s| s > scores[0]).count();
        let tied = scores[1..].iter().filter(|&&s| s == scores[0]).count();
        prop_assert!(m.rank > above && m.rank <= above + tied + 1);
        let r = MetricsReport::from_cases(&[m]).unwrap();
        prop_assert!(r.values().iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn translator_loss_is_nonnegative_and_zero_on_exact_fit(xs in vecs(5, 3), seed in 0u64..500) {
        for s in TransferStrategy::ALL {
            let spec = TranslatorSpec::new(s, 3);
            let mut p = ParameterSet::new();
            init_translator(&mut p, &spec, &mut stream(seed, "prop")).unwrap();
            let t = Translator::new(&p, &spec).unwrap();
            let random: Vec<_> = xs.iter().map(|x| (x.clone(), xs[0].clone())).collect();
            prop_assert!(t.loss(&random).unwrap() >= 0.0);
            let exact: Vec<_> = xs.iter().map(|x| (x.clone(), t.translate(x).unwrap())).collect();
            let l = t.loss(&exact).unwrap();
            // Only the orthogonal penalty can remain.
            if s != TransferStrategy::OrthogonalLinear {
                prop_assert!(l.abs() < 1e-24);
            }
        }
    }

    #[test]
    fn sliding_window_gives_n_minus_one_positives(n in 0usize..40, l in 1usize..12) {
        let h = ReadingHistory {
            user: 0,
            domain: Domain::Source,
            events: (0..n).map(|i| ReadEvent { article: i * 3, timestamp: i as i64 }).collect(),
        };
        let ex = trnews::corpus::generate_positive_examples(&h, l);
        prop_assert_eq!(ex.len(), n.saturating_sub(1));
        for (i, e) in ex.iter().enumerate() {
            prop_assert_eq!(e.candidate, (i + 1) * 3);
            prop_assert_eq!(e.history.len(), (i + 1).min(l));
            prop_assert_eq!(*e.history.last().unwrap(), i * 3);
        }
    }

    #[test]
    fn batches_partition_the_examples(n in 0usize..200, size in 1usize..50, seed in 0u64..100) {
        let items: Vec<usize> = (0..n).collect();
        let batches = make_batches(&items, size, &mut stream(seed, "prop"));
        prop_assert_eq!(batches.len(), n.div_ceil(size));
        prop_assert!(batches.iter().rev().skip(1).all(|b| b.len() == size));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..50), name in "[a-z]{1,8}(\\.[a-z0-9]{1,4}){0,2}") {
        let mut p = ParameterSet::new();
        let n = values.len();
        p.insert(name.clone(), Tensor::from_vec(&[n], values.clone()).unwrap()).unwrap();
        p.insert("z.matrix", Tensor::from_vec(&[1, n], values).unwrap()).unwrap();
        let bytes = checkpoint::encode(&p);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(checkpoint::encode(&back), bytes);
        prop_assert_eq!(checkpoint::hash(&back), checkpoint::hash(&p));
    }

    #[test]
    fn adam_leaves_ungraded_parameters_alone(a in prop::collection::vec(-1.0f64..1.0, 3), g in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::vector(a.clone())).unwrap();
        p.insert("b", Tensor::vector(a.clone())).unwrap();
        let mut grads = Gradients::new();
        grads.insert("a", Tensor::vector(g.clone())).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut p, &grads, &mut st, &AdamConfig::default()).unwrap();
        prop_assert_eq!(p.get("b").unwrap().values(), a.as_slice());
        prop_assert_eq!(st.param_steps("a"), 1);
        prop_assert_eq!(st.param_steps("b"), 0);
        // First Adam step moves each coordinate by at most lr, against the gradient.
        for ((new, old), gi) in p.get("a").unwrap().values().iter().zip(&a).zip(&g) {
            prop_assert!((new - old).abs() <= 0.001 + 1e-12);
            prop_assert!(gi * (new - old) <= 0.0);
        }
    }

    #[test]
    fn config_text_round_trips(dim in 2usize..64, l in 1usize..20, lr in 1e-5f64..0.1, patience in 1usize..10, extra in 0usize..40, seed in any::<u64>()) {
        let text = format!(
            "seed = {seed}\nmodel.dim = {dim}\nmodel.history_len = {l}\ntrain.lr = {lr}\ntrain.patience = {patience}\ntrain.max_iter = {}\n",
            patience + extra
        );
        let c = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(c.model.translator.hidden_width, (dim / 2).max(1));
        let again = RunConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(again.to_text(), c.to_text());
        prop_assert_eq!(again.train.lr, lr);
    }
}
