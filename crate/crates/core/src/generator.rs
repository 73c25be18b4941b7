//! Sampling synthetic streams from a trained model, and scoring links.

use serde::{Deserialize, Serialize};

use crate::distributions::CategoricalParams;
use crate::encoder::NodeStates;
use crate::error::{Error, Result};
use crate::evaluation::LabelledLink;
use crate::event_store::{EventStream, Interaction};
use crate::model::Model;
use crate::seeds::{stream_rng, Stream};
use crate::tape::{Matrix, Tape};

/// Destination re-draws allowed before a self-loop pair is dropped.
pub const SELF_LOOP_RETRIES: usize = 10;

/// Consecutive batches without a single kept pair before giving up.
const MAX_EMPTY_BATCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub num_interactions: usize,
    pub batch_size: usize,
    pub node_pool_size: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            num_interactions: 1000,
            batch_size: 200,
            node_pool_size: 100,
            seed: 0,
        }
    }
}

/// Grow a new stream from an empty graph: every pool node starts with zero
/// memory, and each batch is sampled from embeddings that reflect all the
/// batches before it.
pub fn generate(model: &Model, config: &GenerationConfig) -> Result<EventStream> {
    if config.batch_size == 0 {
        return Err(Error::Argument("generation batch_size must be positive".into()));
    }
    if config.node_pool_size < 2 {
        return Err(Error::Argument("node pool needs at least two nodes".into()));
    }
    let pool = config.node_pool_size;
    let mut rng = stream_rng(config.seed, Stream::Generate);
    let mut states = model.fresh_states(pool, 0.0);
    let nodes: Vec<usize> = (0..pool).collect();
    let (enc, dec) = (&model.encoder, &model.decoder);
    let mut out: Vec<Interaction> = Vec::with_capacity(config.num_interactions);
    let mut clock = 0.0_f64;
    let mut skipped = 0usize;
    let mut empty_batches = 0usize;

    while out.len() < config.num_interactions {
        let want = config.batch_size.min(config.num_interactions - out.len());
        // Just past the clock, so the previous batch counts as history.
        let at_time = clock.next_up();
        let mut tape = Tape::new(&model.params);
        let memory = enc.memory_var(&mut tape, &states, None);
        let z = enc.embed_var(&mut tape, memory, &states, &nodes, at_time);
        let src_logits = dec.reshape_var(&mut tape, z);
        let source = CategoricalParams::new(tape.value(src_logits).data.clone())?;
        let sources: Vec<usize> = (0..want).map(|_| source.sample(&mut rng)).collect();

        let dst_logits = dec.product_by_index(&mut tape, z, &sources);
        let mut pairs = Vec::with_capacity(want);
        for (r, &src) in sources.iter().enumerate() {
            let dist = CategoricalParams::new(tape.value(dst_logits).row(r).to_vec())?;
            let mut dst = dist.sample(&mut rng);
            let mut tries = 0;
            while dst == src && tries < SELF_LOOP_RETRIES {
                dst = dist.sample(&mut rng);
                tries += 1;
            }
            if dst == src {
                skipped += 1;
                continue;
            }
            pairs.push((src, dst));
        }
        if pairs.is_empty() {
            empty_batches += 1;
            if empty_batches >= MAX_EMPTY_BATCHES {
                return Err(Error::Domain(format!(
                    "generation stalled: {MAX_EMPTY_BATCHES} batches in a row produced only self-loops"
                )));
            }
            continue;
        }
        empty_batches = 0;

        let src_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let dst_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let zs = tape.gather_rows(z, &src_rows);
        let zd = tape.gather_rows(z, &dst_rows);
        let h0 = dec.merge_var(&mut tape, zs, zd);
        let h0: Matrix = tape.value(h0).clone();
        drop(tape);
        let tails = dec.sample_tail(&model.params, h0, &mut rng)?;

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by(|&a, &b| tails[a].0.total_cmp(&tails[b].0));
        let mut batch = Vec::with_capacity(pairs.len());
        for i in order {
            clock += tails[i].0;
            batch.push(Interaction {
                src: pairs[i].0,
                dst: pairs[i].1,
                t: clock,
                features: tails[i].1.clone(),
            });
        }
        enc.update_memory(&model.params, &mut states, &batch)?;
        out.extend(batch);
    }
    if skipped > 0 {
        log::warn!("dropped {skipped} self-loop pairs after {SELF_LOOP_RETRIES} re-draws each");
    }
    EventStream::new(out, model.schema.clone(), pool, 0.0)
}

/// `product_score(embed(src, t), embed(dst, t))` for every `(src, dst, t)`.
/// A higher score means a higher conditional probability of `dst` given
/// `src` over any fixed candidate set.
pub fn score_links(model: &Model, states: &NodeStates, pairs: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut i = 0;
    // Pairs sharing a timestamp share one tape.
    while i < pairs.len() {
        let t = pairs[i].2;
        let j = i + pairs[i..].iter().take_while(|p| p.2 == t).count();
        let mut nodes = Vec::with_capacity(2 * (j - i));
        for &(s, d, _) in &pairs[i..j] {
            for n in [s, d] {
                if n >= states.len() {
                    return Err(Error::Domain(format!("node {n} outside universe of {}", states.len())));
                }
            }
            nodes.push(s);
            nodes.push(d);
        }
        let mut tape = Tape::new(&model.params);
        let memory = model.encoder.memory_var(&mut tape, states, None);
        let z = model.encoder.embed_var(&mut tape, memory, states, &nodes, t);
        let z = tape.value(z);
        for k in 0..j - i {
            scores.push(
                model
                    .decoder
                    .product_score(&model.params, z.row(2 * k), z.row(2 * k + 1))?,
            );
        }
        i = j;
    }
    Ok(scores)
}

/// `log p(dst | src)` under the destination distribution over every node
/// of `states`, for every `(src, dst, t)`. Raw product scores rank
/// destinations only for a fixed source, since the softmax ignores a
/// per-source offset; these log-probabilities can be pooled across sources.
pub fn link_log_probabilities(model: &Model, states: &NodeStates, pairs: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let n = states.len();
    if let Some(&(s, d, _)) = pairs.iter().find(|p| p.0 >= n || p.1 >= n) {
        return Err(Error::Domain(format!("pair ({s}, {d}) outside universe of {n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(pairs.len());
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].2;
        let j = i + pairs[i..].iter().take_while(|p| p.2 == t).count();
        let mut tape = Tape::new(&model.params);
        let memory = model.encoder.memory_var(&mut tape, states, None);
        let z = model.encoder.embed_var(&mut tape, memory, states, &all, t);
        let z = tape.value(z);
        let rows: Vec<Vec<f64>> = (0..n).map(|k| z.row(k).to_vec()).collect();
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for &(s, d, _) in &pairs[i..j] {
            if cached.as_ref().is_none_or(|c| c.0 != s) {
                let dist = model.decoder.destination_distribution(&model.params, &rows[s], &rows)?;
                cached = Some((s, dist.log_probabilities()));
            }
            out.push(cached.as_ref().expect("filled above").1[d]);
        }
        i = j;
    }
    Ok(out)
}

/// Score labelled links in chronological chunks of `batch_size` by
/// [`link_log_probabilities`]. Each chunk is scored from memory that holds
/// only earlier chunks; the chunk's positive interactions are applied
/// afterwards.
pub fn score_labelled(
    model: &Model,
    states: &mut NodeStates,
    links: &[LabelledLink],
    batch_size: usize,
) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be positive".into()));
    }
    let mut scores = Vec::with_capacity(links.len());
    for chunk in links.chunks(batch_size) {
        let triples: Vec<(usize, usize, f64)> = chunk
            .iter()
            .map(|l| (l.interaction.src, l.interaction.dst, l.interaction.t))
            .collect();
        scores.extend(link_log_probabilities(model, states, &triples)?);
        let positives: Vec<Interaction> = chunk
            .iter()
            .filter(|l| l.positive)
            .map(|l| l.interaction.clone())
            .collect();
        model.encoder.update_memory(&model.params, states, &positives)?;
    }
    Ok(scores)
}

/// Replay a stream through the encoder in batches to warm up memory.
pub fn replay(model: &Model, states: &mut NodeStates, stream: &[Interaction], batch_size: usize) -> Result<()> {
    for chunk in stream.chunks(batch_size.max(1)) {
        model.encoder.update_memory(&model.params, states, chunk)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::{cumulative_times, inter_event_deltas, FeatureKind, FeatureSchema};
    use crate::model::ModelConfig;

    fn model(schema: &str) -> Model {
        let config = ModelConfig {
            d_mem: 4,
            d_emb: 4,
            d_time: 2,
            heads: 2,
            gmm_components: 2,
            d_step: 3,
            ..ModelConfig::default()
        };
        Model::new(config, schema.parse::<FeatureSchema>().unwrap(), 3).unwrap()
    }

    fn config(n: usize) -> GenerationConfig {
        GenerationConfig {
            num_interactions: n,
            batch_size: 16,
            node_pool_size: 12,
            seed: 5,
        }
    }

    #[test]
    fn zero_interactions_gives_empty_stream() {
        let s = generate(&model("num"), &config(0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.num_nodes(), 12);
    }

    #[test]
    fn generated_streams_are_valid_and_reproducible() {
        let m = model("cat:3,num");
        let a = generate(&m, &config(100)).unwrap();
        let b = generate(&m, &config(100)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let ts = a.timestamps();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(cumulative_times(a.origin_time(), &inter_event_deltas(&a).unwrap()), ts);
        for x in a.interactions() {
            assert_ne!(x.src, x.dst);
            assert_eq!(x.features.len(), 2);
            assert!(x.features[0] < 3.0);
        }
        assert_eq!(a.schema().kind(0), FeatureKind::Categorical { cardinality: 3 });
        let c = generate(&m, &GenerationConfig { seed: 6, ..config(100) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_less_schema_generates() {
        let s = generate(&model(""), &config(20)).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.interactions().iter().all(|x| x.features.is_empty()));
    }

    #[test]
    fn pool_of_one_rejected() {
        let c = GenerationConfig {
            node_pool_size: 1,
            ..config(5)
        };
        assert!(generate(&model("num"), &c).is_err());
    }

    #[test]
    fn link_scores_match_destination_ranking() {
        let m = model("num");
        let mut states = m.fresh_states(6, 0.0);
        let xs: Vec<Interaction> = (0..6)
            .map(|i| Interaction {
                src: i % 3,
                dst: 3 + i % 3,
                t: i as f64,
                features: vec![0.5],
            })
            .collect();
        m.encoder.update_memory(&m.params, &mut states, &xs).unwrap();
        let pairs = [(0, 3, 7.0), (0, 4, 7.0), (0, 5, 7.0)];
        let scores = score_links(&m, &states, &pairs).unwrap();
        assert_eq!(scores.len(), 3);
        let z: Vec<Vec<f64>> = m
            .encoder
            .embed(&m.params, &states, &[0, 3, 4, 5], 7.0)
            .unwrap()
            .into_iter()
            .map(|e| e.vector)
            .collect();
        let dist = m.decoder.destination_distribution(&m.params, &z[0], &z[1..]).unwrap();
        for k in 0..3 {
            let direct = m.decoder.product_score(&m.params, &z[0], &z[k + 1]).unwrap();
            assert!((scores[k] - direct).abs() < 1e-12);
        }
        let probs = dist.probabilities();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(scores[a] > scores[b], probs[a] > probs[b]);
            }
        }
        assert!(score_links(&m, &states, &[(0, 9, 1.0)]).is_err());
    }

    #[test]
    fn log_probabilities_normalize_over_the_universe() {
        let m = model("num");
        let mut states = m.fresh_states(5, 0.0);
        let xs: Vec<Interaction> = (0..4)
            .map(|i| Interaction {
                src: i % 2,
                dst: 2 + i % 3,
                t: i as f64,
                features: vec![0.1 * i as f64],
            })
            .collect();
        m.encoder.update_memory(&m.params, &mut states, &xs).unwrap();
        for src in 0..2 {
            let pairs: Vec<(usize, usize, f64)> = (0..5).map(|d| (src, d, 9.0)).collect();
            let lp = link_log_probabilities(&m, &states, &pairs).unwrap();
            let total: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
            // Differences of log-probabilities equal differences of raw scores.
            let raw = score_links(&m, &states, &pairs).unwrap();
            for d in 1..5 {
                assert!(((lp[d] - lp[0]) - (raw[d] - raw[0])).abs() < 1e-9);
            }
        }
        assert!(link_log_probabilities(&m, &states, &[(0, 5, 1.0)]).is_err());
    }
}
