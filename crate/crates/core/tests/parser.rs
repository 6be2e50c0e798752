mod common;

use common::{concert_schema, random_ast};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sun::encoder::{encode_context, serialize_tokens, EncoderDims, EncoderParams, SerializedInput, Vocab};
use sun::numerics::{Graph, ParamStore};
use sun::parser::{decode, step_scores, t2s_loss, DecodeMode, DecodeOptions, DecoderContext, DecoderParams, DecoderState};
use sun::sqlkit::{ast_to_actions, Action, GrammarState, SchemaDef};

struct Fixture {
    store: ParamStore,
    enc: EncoderParams,
    dec: DecoderParams,
    schema: SchemaDef,
    input: SerializedInput,
    values: Vec<usize>,
}

impl Fixture {
    fn new(seed: u64, question: &str) -> Self {
        let schema = concert_schema();
        let mut vocab = Vocab::new();
        for w in question.split_whitespace() {
            vocab.add(w);
        }
        let values: Vec<usize> = schema.values.iter().map(|v| vocab.add(&v.token())).collect();
        let words: Vec<String> = question.split_whitespace().map(str::to_owned).collect();
        let input = serialize_tokens(&vocab, &words, &schema);
        let mut store = ParamStore::new(seed);
        let dims = EncoderDims { vocab: vocab.len(), d: 8, layers: 1, heads: 2, max_len: 64 };
        let enc = EncoderParams::register(&mut store, dims).unwrap();
        let dec = DecoderParams::register(&mut store, 8, 8, enc.tok).unwrap();
        Self { store, enc, dec, schema, input, values }
    }

    fn context(&self, g: &mut Graph) -> DecoderContext {
        let e = encode_context(g, &self.enc, &self.input, 0.0, 0, false).unwrap();
        DecoderContext::new(g, &self.dec, e.x, &e.table_spans, &e.column_spans, self.values.clone()).unwrap()
    }

    fn loss(&self, gold: &[Action]) -> f64 {
        let mut g = Graph::with_params(&self.store);
        let ctx = self.context(&mut g);
        let l = t2s_loss(&mut g, &self.dec, &ctx, &self.schema, gold).unwrap();
        g.scalar(l)
    }

    fn decode(&self, opts: DecodeOptions) -> sun::parser::DecodeResult {
        let mut g = Graph::with_params(&self.store);
        let ctx = self.context(&mut g);
        decode(&mut g, &self.dec, &ctx, &self.schema, opts).unwrap()
    }
}

fn opts(mode: DecodeMode, constrained: bool) -> DecodeOptions {
    DecodeOptions { mode, constrained, ..DecodeOptions::default() }
}

#[test]
fn zero_parameters_give_the_uniform_loss() {
    let mut f = Fixture::new(0, "how many singers");
    let ids: Vec<_> = f.store.ids().collect();
    for id in ids {
        f.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let gold = ast_to_actions(&random_ast(&mut rng, &f.schema), &f.schema).unwrap();
        // Forced steps contribute ln 1 = 0.
        let mut state = GrammarState::new(&f.schema);
        let mut expect = 0.0;
        for &a in &gold {
            expect += (state.admissible().len() as f64).ln();
            state.apply(a).unwrap();
        }
        expect /= gold.len() as f64;
        let got = f.loss(&gold);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn gold_errors_name_the_step() {
    let f = Fixture::new(0, "how many singers");
    let gold = ast_to_actions(&random_ast(&mut ChaCha8Rng::seed_from_u64(3), &f.schema), &f.schema).unwrap();
    let mut g = Graph::with_params(&f.store);
    let ctx = f.context(&mut g);
    let err = t2s_loss(&mut g, &f.dec, &ctx, &f.schema, &gold[..gold.len() - 1]).unwrap_err();
    assert!(err.to_string().contains("incomplete"), "{err}");
    let mut bad = gold.clone();
    bad[0] = Action::SelectTable(0);
    let err = t2s_loss(&mut g, &f.dec, &ctx, &f.schema, &bad).unwrap_err();
    assert!(err.to_string().contains("action 0"), "{err}");
    assert!(t2s_loss(&mut g, &f.dec, &ctx, &f.schema, &[]).is_err());
}

#[test]
fn constrained_scores_cover_exactly_the_admissible_set() {
    let f = Fixture::new(4, "list the names");
    let mut g = Graph::with_params(&f.store);
    let ctx = f.context(&mut g);
    let state = DecoderState::initial(&mut g, &f.dec, &ctx, &f.schema);
    let st = step_scores(&mut g, &f.dec, &ctx, &state, true).unwrap();
    assert_eq!(st.candidates, state.grammar.admissible());
    let total: f64 = st.log_probs.iter().map(|lp| lp.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let free = step_scores(&mut g, &f.dec, &ctx, &state, false).unwrap();
    assert!(free.candidates.len() >= st.candidates.len());
    assert!(st.candidates.iter().all(|c| free.candidates.contains(c)));
}

#[test]
fn beam_width_one_is_greedy_and_wider_beams_score_at_least_as_high() {
    for seed in 0..15 {
        let f = Fixture::new(seed, "show the average age of singers");
        let greedy = f.decode(opts(DecodeMode::Greedy, true));
        assert_eq!(f.decode(opts(DecodeMode::Beam(1), true)), greedy);
        let mut prev = greedy.score;
        for w in 2..=4 {
            let beam = f.decode(opts(DecodeMode::Beam(w), true));
            assert!(beam.score >= prev - 1e-12, "seed {seed} width {w}: {} < {prev}", beam.score);
            prev = beam.score;
        }
    }
}

#[test]
fn constrained_decoding_from_random_parameters_is_always_valid() {
    for seed in 0..40 {
        let f = Fixture::new(seed, "which stadium hosts the most concerts");
        for mode in [DecodeMode::Greedy, DecodeMode::Beam(3)] {
            let r = f.decode(opts(mode, true));
            assert!(r.is_valid() && !r.truncated, "seed {seed} {mode:?}: {:?}", r.actions);
            let ast = r.ast.unwrap();
            assert_eq!(ast_to_actions(&ast, &f.schema).unwrap(), r.actions);
        }
    }
}

#[test]
fn step_budget_marks_truncation() {
    let f = Fixture::new(0, "how many singers");
    let r = f.decode(DecodeOptions { max_steps: 2, ..DecodeOptions::default() });
    assert!(r.truncated && !r.is_valid());
    let mut g = Graph::with_params(&f.store);
    let ctx = f.context(&mut g);
    let zero = DecodeOptions { max_steps: 0, ..DecodeOptions::default() };
    assert!(decode(&mut g, &f.dec, &ctx, &f.schema, zero).is_err());
    assert!(decode(&mut g, &f.dec, &ctx, &f.schema, opts(DecodeMode::Beam(0), true)).is_err());
}

#[test]
fn plain_descent_overfits_one_query() {
    let mut f = Fixture::new(9, "names of singers older than 30");
    let gold = ast_to_actions(&random_ast(&mut ChaCha8Rng::seed_from_u64(11), &f.schema), &f.schema).unwrap();
    let mut prev = f64::INFINITY;
    for step in 0..300 {
        let grads = {
            let mut g = Graph::with_params(&f.store);
            let ctx = f.context(&mut g);
            let l = t2s_loss(&mut g, &f.dec, &ctx, &f.schema, &gold).unwrap();
            let loss = g.scalar(l);
            assert!(loss < prev, "step {step}: {loss} !< {prev}");
            prev = loss;
            let grads = g.backward(l).unwrap();
            f.store.ids().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect::<Vec<_>>()
        };
        let ids: Vec<_> = f.store.ids().collect();
        for (id, grad) in ids.into_iter().zip(grads) {
            if let Some(grad) = grad {
                for (w, g) in f.store.get_mut(id).data_mut().iter_mut().zip(grad) {
                    *w -= 0.05 * g;
                }
            }
        }
    }
    assert!(prev < 0.5, "{prev}");
    let r = f.decode(DecodeOptions::default());
    assert_eq!(r.actions, gold);
}
