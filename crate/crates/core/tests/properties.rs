use nalgebra::DMatrix;
use proptest::prelude::*;

use ntpcap::corpus::{cross_entropy_loss, entropy_lower_bound, ContextTrie, Corpus, NextTokenTable};
use ntpcap::interpolate::TargetSet;
use ntpcap::langspace::{phi12, phi21, random_space};
use ntpcap::linalg::{numeric_rank, RANK_TOL};
use ntpcap::model::{
    lift_scalar, softmax, Activation, Dims, ModelOptions, NextTokenModel, ScalarModel, ScalarParams, Transformer,
    TransformerParams, Variant,
};
use ntpcap::ranklab::{feature_matrix, kruskal_rank};
use ntpcap::rng;
use ntpcap::train::TrainConfig;
use ntpcap::Token;

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..=5).prop_flat_map(|omega| {
        prop::collection::vec(prop::collection::vec(1..=omega as Token, 1..=6), 1..=12)
            .prop_map(move |docs| Corpus::new(docs, omega).unwrap())
    })
}

fn scalar_params(omega: usize, t: usize, m: usize, seed: u64) -> ScalarParams {
    let mut r = rng::seeded(seed, 0);
    ScalarParams {
        z: rng::gaussian_vec(&mut r, omega),
        u: rng::gaussian_vec(&mut r, t),
        w: rng::gaussian_vec(&mut r, m),
        b: rng::gaussian_vec(&mut r, m),
        v: DMatrix::from_vec(m, omega, rng::gaussian_vec(&mut r, m * omega)),
        empty_logits: rng::gaussian_vec(&mut r, omega - 1),
    }
}

/// Model that answers with fixed smoothed empirical rows.
struct Smoothed {
    omega: usize,
    table: NextTokenTable,
    alpha: f64,
}

impl NextTokenModel for Smoothed {
    fn omega(&self) -> usize {
        self.omega
    }

    fn predict(&self, ctx: &[Token]) -> ntpcap::Result<Vec<f64>> {
        let row = self.table.get(ctx).unwrap();
        Ok(row.iter().map(|p| (1.0 - self.alpha) * p + self.alpha / self.omega as f64).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_never_below_bound(corpus in corpus_strategy(), alpha in 0.0f64..1.0) {
        let trie = ContextTrie::build(&corpus);
        let model = Smoothed { omega: corpus.omega(), table: NextTokenTable::from_trie(&trie), alpha };
        let loss = cross_entropy_loss(&corpus, &model).unwrap();
        prop_assert!(loss >= entropy_lower_bound(&trie) - 1e-9);
        if alpha == 0.0 {
            prop_assert!((loss - entropy_lower_bound(&trie)).abs() < 1e-9);
        }
    }

    #[test]
    fn trie_ignores_document_order(corpus in corpus_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut docs = corpus.docs().to_vec();
        docs.shuffle(&mut rng::seeded(seed, 0));
        let shuffled = Corpus::new(docs, corpus.omega()).unwrap();
        let (a, b) = (ContextTrie::build(&corpus), ContextTrie::build(&shuffled));
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(entropy_lower_bound(&a), entropy_lower_bound(&b));
    }

    #[test]
    fn bound_invariant_under_relabelling(corpus in corpus_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let omega = corpus.omega();
        let mut perm: Vec<Token> = (1..=omega as Token).collect();
        perm.shuffle(&mut rng::seeded(seed, 0));
        let docs = corpus.docs().iter().map(|d| d.iter().map(|&t| perm[t as usize - 1]).collect()).collect();
        let relabelled = Corpus::new(docs, omega).unwrap();
        let (a, b) = (ContextTrie::build(&corpus), ContextTrie::build(&relabelled));
        prop_assert_eq!(a.n_contexts(), b.n_contexts());
        prop_assert!((entropy_lower_bound(&a) - entropy_lower_bound(&b)).abs() < 1e-12);
    }

    #[test]
    fn scalar_map_equivariant_under_relabelling(
        omega in 2usize..=5,
        ctx in prop::collection::vec(0usize..5, 1..=5),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut r = rng::seeded(seed, 0);
        let z = rng::gaussian_vec(&mut r, omega);
        let u = rng::gaussian_vec(&mut r, 5);
        let mut perm: Vec<usize> = (0..omega).collect();
        perm.shuffle(&mut r);
        let ctx: Vec<Token> = ctx.iter().map(|&c| (c % omega) as Token + 1).collect();
        let moved: Vec<Token> = ctx.iter().map(|&t| perm[t as usize - 1] as Token + 1).collect();
        let mut zp = vec![0.0; omega];
        for (i, &p) in perm.iter().enumerate() {
            zp[p] = z[i];
        }
        for variant in [Variant::SelfAttention, Variant::TokenAverage] {
            let a = variant.scalar_map(&z, &u, &ctx).unwrap();
            let b = variant.scalar_map(&zp, &u, &moved).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn softmax_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (p, q) = (softmax(&x), softmax(&shifted));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_id_lines_roundtrip(corpus in corpus_strategy()) {
        let back = Corpus::from_id_lines(&corpus.to_id_lines(), Some(corpus.omega())).unwrap();
        prop_assert_eq!(back.docs(), corpus.docs());
    }

    #[test]
    fn params_json_roundtrip(d in 1usize..4, heads in 1usize..3, m in 1usize..5, omega in 2usize..5, seed in any::<u64>()) {
        let dims = Dims { d, heads, d0: 2, dr: 3, m, omega, t_max: 4 };
        let p = TransformerParams::init_gaussian(dims, 1.0, &mut rng::seeded(seed, 0));
        prop_assert_eq!(TransformerParams::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn targets_json_roundtrip(omega in 2usize..5, n in 1usize..10, seed in any::<u64>()) {
        let ts = TargetSet::random(omega, n, 4, seed).unwrap();
        let back = TargetSet::from_json(&ts.to_json()).unwrap();
        prop_assert_eq!(back.items(), ts.items());
    }

    #[test]
    fn config_text_roundtrip(m in 1usize..200, step in 1e-6f64..1.0, frac in 0.001f64..1.0, seed in any::<u64>()) {
        let cfg = TrainConfig { m, stepsize: step, threshold_fraction: frac, seed, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn language_space_roundtrip(omega in 2usize..=4, depth in 1usize..=4, seed in any::<u64>()) {
        let p = random_space(omega, depth, 0.7, seed).unwrap();
        let q = phi12(&p);
        let q2 = phi12(&phi21(&q));
        for t in 1..=depth {
            for (a, b) in q.level(t).iter().zip(q2.level(t)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lift_matches_scalar_model(
        omega in 2usize..5,
        m in 1usize..5,
        d in 1usize..5,
        heads in 1usize..3,
        ctx in prop::collection::vec(0usize..4, 0..=4),
        seed in any::<u64>(),
    ) {
        let sp = scalar_params(omega, 4, m, seed);
        let ctx: Vec<Token> = ctx.iter().map(|&c| (c % omega) as Token + 1).collect();
        let scalar = ScalarModel { params: sp.clone(), activation: Activation::Tanh, variant: Variant::SelfAttention };
        let full = Transformer {
            params: lift_scalar(&sp, d, heads, 2, 2).unwrap(),
            activation: Activation::Tanh,
            options: ModelOptions::default(),
        };
        let (a, b) = (scalar.predict(&ctx).unwrap(), full.predict(&ctx).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn kruskal_bounded_by_rank(
        a in prop::collection::vec(-2.0f64..2.0, 1..5),
        b in prop::collection::vec(-2.0f64..2.0, 1..6),
    ) {
        let fm = feature_matrix(&a, &b, &Activation::Gelu);
        let k = kruskal_rank(&fm, RANK_TOL).unwrap();
        prop_assert!(k <= numeric_rank(&fm, RANK_TOL));
        prop_assert!(k <= a.len().min(b.len()));
    }
}
