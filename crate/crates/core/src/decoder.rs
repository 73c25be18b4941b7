//! Factorized interaction probability `p(src) · p(dst | src) · p(t, e | src, dst)`.
//!
//! Scores come from three small modules over temporal embeddings:
//!
//! * reshape: `W_f · relu(W_src · z)`, one score per candidate source;
//! * product: `W_f · relu(W_src · z_src + W_dst · z_dst)`, one score per
//!   candidate destination given the source;
//! * merge: `W_f · relu(relu(W_src · z_src) + relu(W_dst · z_dst))`, the
//!   initial hidden state of the time-and-features sequence model.
//!
//! The sequence model is a GRU run for `n + 1` steps. Step 0 reads a learned
//! start token and emits the Exponential rate of the inter-event time; step
//! `i` reads an embedding of variable `i − 1` (the delta for `i = 1`) and
//! emits the parameters of feature `i`.

use rand::Rng;

use crate::distributions::{CategoricalParams, ExponentialParam, FeatureHeadParams, GmmParams, POSITIVE_FLOOR};
use crate::error::{Error, Result};
use crate::event_store::{FeatureKind, FeatureSchema};
use crate::model::ModelConfig;
use crate::nn::{init_uniform, GruCell, Linear, ParamId, ParamStore};
use crate::tape::{Matrix, Tape, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone)]
pub struct Decoder {
    pub(crate) reshape_src: ParamId,
    pub(crate) reshape_f: ParamId,
    pub(crate) product_src: ParamId,
    pub(crate) product_dst: ParamId,
    pub(crate) product_f: ParamId,
    pub(crate) merge_src: ParamId,
    pub(crate) merge_dst: ParamId,
    pub(crate) merge_f: ParamId,
    sequence: GruCell,
    start_token: ParamId,
    time_input: Linear,
    /// Input embeddings for features `1..n-1`; the last feature is never
    /// fed back.
    feature_inputs: Vec<Linear>,
    pub(crate) time_head: Linear,
    feature_heads: Vec<Linear>,
    schema: FeatureSchema,
    d_emb: usize,
    gmm_components: usize,
}

/// Observed conditioning values for teacher forcing: the inter-event time
/// and all `n` feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub delta: f64,
    pub features: Vec<f64>,
}

/// Raw per-step head outputs of the sequence model for a batch of rows.
pub(crate) struct TailOutputs {
    pub time_raw: Var,
    pub heads: Vec<Var>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: &ModelConfig,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        if config.gmm_components == 0 {
            return Err(Error::Argument("GMM needs at least one component".into()));
        }
        let d_emb = config.d_emb;
        let d_h = config.hidden();
        let d_seq = config.sequence_hidden();
        let d_step = config.d_step;
        let mut mat = |name: &str, rows: usize, cols: usize| {
            store.add(format!("decoder.{name}"), init_uniform(rng, rows, cols, cols))
        };
        let reshape_src = mat("reshape.src", d_h, d_emb);
        let reshape_f = mat("reshape.f", 1, d_h);
        let product_src = mat("product.src", d_h, d_emb);
        let product_dst = mat("product.dst", d_h, d_emb);
        let product_f = mat("product.f", 1, d_h);
        let merge_src = mat("merge.src", d_h, d_emb);
        let merge_dst = mat("merge.dst", d_h, d_emb);
        let merge_f = mat("merge.f", d_seq, d_h);
        let start_token = mat("sequence.start", 1, d_step);
        let sequence = GruCell::new(store, rng, "decoder.sequence", d_step, d_seq);
        let time_input = Linear::new(store, rng, "decoder.input.time", 1, d_step, true);
        let n = schema.len();
        let feature_inputs = (0..n.saturating_sub(1))
            .map(|i| {
                let width = match schema.kind(i) {
                    FeatureKind::Categorical { cardinality } => cardinality,
                    FeatureKind::Numerical => 1,
                };
                Linear::new(store, rng, &format!("decoder.input.f{}", i + 1), width, d_step, true)
            })
            .collect();
        let time_head = Linear::new(store, rng, "decoder.head.time", d_seq, 1, true);
        let feature_heads = (0..n)
            .map(|i| {
                let width = match schema.kind(i) {
                    FeatureKind::Categorical { cardinality } => cardinality,
                    FeatureKind::Numerical => 3 * config.gmm_components,
                };
                Linear::new(store, rng, &format!("decoder.head.f{}", i + 1), d_seq, width, true)
            })
            .collect();
        Ok(Decoder {
            reshape_src,
            reshape_f,
            product_src,
            product_dst,
            product_f,
            merge_src,
            merge_dst,
            merge_f,
            sequence,
            start_token,
            time_input,
            feature_inputs,
            time_head,
            feature_heads,
            schema: schema.clone(),
            d_emb,
            gmm_components: config.gmm_components,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn gmm_components(&self) -> usize {
        self.gmm_components
    }

    // ---- tape building blocks -------------------------------------------

    /// Reshape scores `[rows × 1]`.
    pub(crate) fn reshape_var(&self, tape: &mut Tape, z: Var) -> Var {
        let w = tape.param(self.reshape_src);
        let h = tape.matmul_t(z, w);
        let h = tape.relu(h);
        let f = tape.param(self.reshape_f);
        tape.matmul_t(h, f)
    }

    /// Product scores `[sources × candidates]` for the given source rows
    /// against every candidate row.
    pub(crate) fn product_var(&self, tape: &mut Tape, z_src: Var, z_cand: Var) -> Var {
        let ws = tape.param(self.product_src);
        let wd = tape.param(self.product_dst);
        let a = tape.matmul_t(z_src, ws);
        let b = tape.matmul_t(z_cand, wd);
        let f = tape.param(self.product_f);
        tape.pair_score(a, b, f)
    }

    /// Like [`Decoder::product_var`] but with the source projection shared
    /// across rows gathered by index.
    pub(crate) fn product_by_index(&self, tape: &mut Tape, z: Var, src_rows: &[usize]) -> Var {
        let ws = tape.param(self.product_src);
        let wd = tape.param(self.product_dst);
        let a = tape.matmul_t(z, ws);
        let a = tape.gather_rows(a, src_rows);
        let b = tape.matmul_t(z, wd);
        let f = tape.param(self.product_f);
        tape.pair_score(a, b, f)
    }

    pub(crate) fn merge_var(&self, tape: &mut Tape, z_src: Var, z_dst: Var) -> Var {
        let ws = tape.param(self.merge_src);
        let wd = tape.param(self.merge_dst);
        let a = tape.matmul_t(z_src, ws);
        let a = tape.relu(a);
        let b = tape.matmul_t(z_dst, wd);
        let b = tape.relu(b);
        let s = tape.add(a, b);
        let s = tape.relu(s);
        let f = tape.param(self.merge_f);
        tape.matmul_t(s, f)
    }

    fn step_input(&self, tape: &mut Tape, variable: usize, values: &[f64]) -> Var {
        if variable == 0 {
            let x = tape.constant(Matrix::column(values.to_vec()));
            return self.time_input.forward(tape, x);
        }
        let feature = variable - 1;
        let x = match self.schema.kind(feature) {
            FeatureKind::Categorical { cardinality } => {
                let mut m = Matrix::zeros(values.len(), cardinality);
                for (r, &v) in values.iter().enumerate() {
                    m.set(r, v as usize, 1.0);
                }
                tape.constant(m)
            }
            FeatureKind::Numerical => tape.constant(Matrix::column(values.to_vec())),
        };
        self.feature_inputs[feature].forward(tape, x)
    }

    /// Run the sequence model over `h0 [rows × d_seq]`. `next_values` is
    /// called after each head with the step index and the raw head output,
    /// and must return the realized value of that variable for every row.
    pub(crate) fn run_tail<F>(&self, tape: &mut Tape, h0: Var, mut next_values: F) -> Result<TailOutputs>
    where
        F: FnMut(&Tape, usize, Var) -> Result<Vec<f64>>,
    {
        let rows = tape.value(h0).rows;
        let start = tape.param(self.start_token);
        let x = tape.broadcast_rows(start, rows);
        let mut h = self.sequence.forward(tape, x, h0);
        let time_raw = self.time_head.forward(tape, h);
        let n = self.schema.len();
        let mut heads = Vec::with_capacity(n);
        let mut last = time_raw;
        for i in 1..=n {
            let values = next_values(tape, i - 1, last)?;
            let x = self.step_input(tape, i - 1, &values);
            h = self.sequence.forward(tape, x, h);
            last = self.feature_heads[i - 1].forward(tape, h);
            heads.push(last);
        }
        Ok(TailOutputs { time_raw, heads })
    }

    /// Log-likelihood column `[rows × 1]` of observed deltas and features
    /// under teacher forcing.
    pub(crate) fn tail_log_likelihood(
        &self,
        tape: &mut Tape,
        h0: Var,
        deltas: &[f64],
        features: &[Vec<f64>],
    ) -> Result<Var> {
        let out = self.run_tail(tape, h0, |_, variable, _| {
            Ok(if variable == 0 {
                deltas.to_vec()
            } else {
                features.iter().map(|f| f[variable - 1]).collect()
            })
        })?;
        let rate = tape.softplus(out.time_raw);
        let rate = tape.add_scalar(rate, POSITIVE_FLOOR);
        let log_rate = tape.log(rate);
        let d = tape.constant(Matrix::column(deltas.to_vec()));
        let scaled = tape.mul(rate, d);
        let mut terms = vec![tape.sub(log_rate, scaled)];
        for (i, &raw) in out.heads.iter().enumerate() {
            let values: Vec<f64> = features.iter().map(|f| f[i]).collect();
            terms.push(match self.schema.kind(i) {
                FeatureKind::Categorical { .. } => {
                    let lsm = tape.log_softmax_rows(raw);
                    let idx: Vec<usize> = values.iter().map(|&v| v as usize).collect();
                    tape.pick_cols(lsm, &idx)
                }
                FeatureKind::Numerical => self.gmm_log_likelihood(tape, raw, &values),
            });
        }
        let all = tape.concat_cols(&terms);
        Ok(all)
    }

    fn gmm_log_likelihood(&self, tape: &mut Tape, raw: Var, values: &[f64]) -> Var {
        let m = self.gmm_components;
        let means = tape.slice_cols(raw, 0, m);
        let stds = tape.slice_cols(raw, m, m);
        let stds = tape.softplus(stds);
        let stds = tape.add_scalar(stds, POSITIVE_FLOOR);
        let weights = tape.slice_cols(raw, 2 * m, m);
        let log_w = tape.log_softmax_rows(weights);
        let mut x = Matrix::zeros(values.len(), m);
        for (r, &v) in values.iter().enumerate() {
            x.row_mut(r).iter_mut().for_each(|e| *e = v);
        }
        let x = tape.constant(x);
        let diff = tape.sub(x, means);
        let inv = tape.recip(stds);
        let z = tape.mul(diff, inv);
        let z2 = tape.square(z);
        let quad = tape.scale(z2, -0.5);
        let log_std = tape.log(stds);
        let log_n = tape.sub(quad, log_std);
        let log_n = tape.add_scalar(log_n, -HALF_LN_2PI);
        let comp = tape.add(log_w, log_n);
        tape.log_sum_exp_rows(comp)
    }

    pub(crate) fn head_params(&self, feature: usize, raw: &[f64]) -> Result<FeatureHeadParams> {
        Ok(match self.schema.kind(feature) {
            FeatureKind::Categorical { .. } => FeatureHeadParams::Categorical(CategoricalParams::new(raw.to_vec())?),
            FeatureKind::Numerical => FeatureHeadParams::Gmm(GmmParams::from_raw(raw)?),
        })
    }

    // ---- value-level operations -----------------------------------------

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_emb {
            return Err(Error::Shape(format!(
                "embedding of length {} where {} expected",
                z.len(),
                self.d_emb
            )));
        }
        Ok(())
    }

    fn rows_var(&self, tape: &mut Tape, rows: &[&[f64]]) -> Result<Var> {
        for r in rows {
            self.check_dim(r)?;
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(tape.constant(Matrix::from_vec(rows.len(), self.d_emb, data)))
    }

    pub fn reshape_score(&self, params: &ParamStore, z: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(params);
        let z = self.rows_var(&mut tape, &[z])?;
        let s = self.reshape_var(&mut tape, z);
        Ok(tape.value(s).scalar())
    }

    pub fn product_score(&self, params: &ParamStore, z_src: &[f64], z_dst: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(params);
        let a = self.rows_var(&mut tape, &[z_src])?;
        let b = self.rows_var(&mut tape, &[z_dst])?;
        let s = self.product_var(&mut tape, a, b);
        Ok(tape.value(s).scalar())
    }

    pub fn merge(&self, params: &ParamStore, z_src: &[f64], z_dst: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(params);
        let a = self.rows_var(&mut tape, &[z_src])?;
        let b = self.rows_var(&mut tape, &[z_dst])?;
        let h = self.merge_var(&mut tape, a, b);
        Ok(tape.value(h).data.clone())
    }

    pub fn source_distribution(&self, params: &ParamStore, embeddings: &[Vec<f64>]) -> Result<CategoricalParams> {
        if embeddings.is_empty() {
            return Err(Error::Argument("no candidate sources".into()));
        }
        let mut tape = Tape::new(params);
        let rows: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
        let z = self.rows_var(&mut tape, &rows)?;
        let s = self.reshape_var(&mut tape, z);
        CategoricalParams::new(tape.value(s).data.clone())
    }

    pub fn destination_distribution(
        &self,
        params: &ParamStore,
        z_src: &[f64],
        candidates: &[Vec<f64>],
    ) -> Result<CategoricalParams> {
        if candidates.is_empty() {
            return Err(Error::Argument("no candidate destinations".into()));
        }
        let mut tape = Tape::new(params);
        let a = self.rows_var(&mut tape, &[z_src])?;
        let rows: Vec<&[f64]> = candidates.iter().map(Vec::as_slice).collect();
        let b = self.rows_var(&mut tape, &rows)?;
        let s = self.product_var(&mut tape, a, b);
        CategoricalParams::new(tape.value(s).data.clone())
    }

    /// Time and feature distributions for one pair. With `realized`, every
    /// step is conditioned on the observed values (teacher forcing);
    /// without it each step is conditioned on the previous head's mode.
    pub fn time_msg_params(
        &self,
        params: &ParamStore,
        h0: &[f64],
        realized: Option<&Realized>,
    ) -> Result<(ExponentialParam, Vec<FeatureHeadParams>)> {
        let d_seq = params.value(self.merge_f).rows;
        if h0.len() != d_seq {
            return Err(Error::Shape(format!(
                "h0 of length {} where {d_seq} expected",
                h0.len()
            )));
        }
        if let Some(r) = realized {
            if r.features.len() != self.schema.len() {
                return Err(Error::Argument(format!(
                    "{} realized feature values for {} features",
                    r.features.len(),
                    self.schema.len()
                )));
            }
        }
        let mut tape = Tape::new(params);
        let h0 = tape.constant(Matrix::row_vector(h0.to_vec()));
        let mut time = None;
        let mut heads = Vec::new();
        self.run_tail(&mut tape, h0, |tape, variable, raw| {
            let raw = &tape.value(raw).data;
            let value = if variable == 0 {
                let e = ExponentialParam::from_raw(raw[0]);
                time = Some(e);
                realized.map_or(e.mean(), |r| r.delta)
            } else {
                let head = self.head_params(variable - 1, raw)?;
                let v = realized.map_or_else(|| head.mode(), |r| r.features[variable - 1]);
                heads.push(head);
                v
            };
            Ok(vec![value])
        })
        .map(|out| {
            let time = time.unwrap_or_else(|| ExponentialParam::from_raw(tape.value(out.time_raw).data[0]));
            if let Some(&last) = out.heads.last() {
                // The last head is never fed back, so collect it here.
                let n = self.schema.len();
                if let Ok(h) = self.head_params(n - 1, &tape.value(last).data) {
                    heads.push(h);
                }
            }
            (time, heads)
        })
    }

    /// Autoregressively sample `(delta, features)` for every row of `h0`,
    /// each sampled value feeding the next step.
    pub(crate) fn sample_tail(
        &self,
        params: &ParamStore,
        h0: Matrix,
        rng: &mut impl Rng,
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        let rows = h0.rows;
        let n = self.schema.len();
        let mut deltas = vec![0.0; rows];
        let mut features = vec![Vec::with_capacity(n); rows];
        let mut tape = Tape::new(params);
        let h0 = tape.constant(h0);
        let out = self.run_tail(&mut tape, h0, |tape, variable, raw| {
            let raw = tape.value(raw);
            let mut values = Vec::with_capacity(rows);
            for r in 0..rows {
                let v = if variable == 0 {
                    let d = ExponentialParam::from_raw(raw.get(r, 0)).sample(rng);
                    deltas[r] = d;
                    d
                } else {
                    let v = self.head_params(variable - 1, raw.row(r))?.sample(rng);
                    features[r].push(v);
                    v
                };
                values.push(v);
            }
            Ok(values)
        })?;
        if n == 0 {
            let raw = tape.value(out.time_raw);
            for (r, d) in deltas.iter_mut().enumerate() {
                *d = ExponentialParam::from_raw(raw.get(r, 0)).sample(rng);
            }
        } else {
            let raw = tape.value(out.heads[n - 1]);
            for (r, f) in features.iter_mut().enumerate() {
                f.push(self.head_params(n - 1, raw.row(r))?.sample(rng));
            }
        }
        Ok(deltas.into_iter().zip(features).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(schema: &str, d_emb: usize) -> Model {
        let config = ModelConfig {
            d_mem: 4,
            d_emb,
            d_time: 2,
            heads: 1,
            gmm_components: 2,
            d_step: 3,
            ..ModelConfig::default()
        };
        Model::new(config, schema.parse().unwrap(), 11).unwrap()
    }

    fn set(params: &mut ParamStore, id: ParamId, data: &[f64]) {
        params.value_mut(id).data.copy_from_slice(data);
    }

    fn relu(v: f64) -> f64 {
        v.max(0.0)
    }

    fn matvec(w: &Matrix, x: &[f64]) -> Vec<f64> {
        (0..w.rows)
            .map(|r| (0..w.cols).map(|c| w.get(r, c) * x[c]).sum())
            .collect()
    }

    #[test]
    fn identity_weight_hand_cases() {
        let m = model("", 2);
        let d = &m.decoder;
        let mut p = m.params.clone();
        set(&mut p, d.reshape_src, &[1.0, 0.0, 0.0, 1.0]);
        set(&mut p, d.reshape_f, &[1.0, 1.0]);
        assert_eq!(d.reshape_score(&p, &[2.0, -3.0]).unwrap(), 2.0);
        assert_eq!(d.reshape_score(&p, &[-2.0, -3.0]).unwrap(), 0.0);
        assert!(matches!(d.reshape_score(&p, &[1.0]), Err(Error::Shape(_))));

        set(&mut p, d.product_src, &[1.0, 0.0, 0.0, 1.0]);
        set(&mut p, d.product_dst, &[1.0, 0.0, 0.0, 1.0]);
        set(&mut p, d.product_f, &[1.0, 1.0]);
        assert_eq!(d.product_score(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);

        set(&mut p, d.merge_src, &[1.0, 0.0, 0.0, 1.0]);
        set(&mut p, d.merge_dst, &[1.0, 0.0, 0.0, 1.0]);
        set(&mut p, d.merge_f, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.merge(&p, &[1.0, -1.0], &[-1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(d.merge(&p, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn product_is_order_sensitive() {
        let m = model("", 3);
        let (a, b) = ([0.5, -0.2, 1.0], [-1.0, 0.3, 0.7]);
        let ab = m.decoder.product_score(&m.params, &a, &b).unwrap();
        let ba = m.decoder.product_score(&m.params, &b, &a).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn modules_match_direct_matrix_arithmetic() {
        let m = model("", 5);
        let d = &m.decoder;
        let p = &m.params;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let zs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let zd: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

            let h: Vec<f64> = matvec(p.value(d.reshape_src), &zs).into_iter().map(relu).collect();
            let want = matvec(p.value(d.reshape_f), &h)[0];
            assert!((d.reshape_score(p, &zs).unwrap() - want).abs() < 1e-10);

            let a = matvec(p.value(d.product_src), &zs);
            let b = matvec(p.value(d.product_dst), &zd);
            let h: Vec<f64> = a.iter().zip(&b).map(|(x, y)| relu(x + y)).collect();
            let want = matvec(p.value(d.product_f), &h)[0];
            assert!((d.product_score(p, &zs, &zd).unwrap() - want).abs() < 1e-10);

            let a: Vec<f64> = matvec(p.value(d.merge_src), &zs).into_iter().map(relu).collect();
            let b: Vec<f64> = matvec(p.value(d.merge_dst), &zd).into_iter().map(relu).collect();
            let h: Vec<f64> = a.iter().zip(&b).map(|(x, y)| relu(x + y)).collect();
            let want = matvec(p.value(d.merge_f), &h);
            for (g, w) in d.merge(p, &zs, &zd).unwrap().iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn softmax_distributions() {
        let m = model("", 3);
        let d = &m.decoder;
        let same = vec![vec![0.3, -0.1, 0.8]; 4];
        for p in d.source_distribution(&m.params, &same).unwrap().probabilities() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        for p in d
            .destination_distribution(&m.params, &[1.0, 0.0, 0.0], &same)
            .unwrap()
            .probabilities()
        {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!(d.source_distribution(&m.params, &[]).is_err());

        let cands = vec![vec![1.0, 2.0, -1.0], vec![-0.5, 0.1, 0.9], vec![2.0, -2.0, 0.0]];
        let z = [0.4, -0.3, 1.2];
        let dist = d.destination_distribution(&m.params, &z, &cands).unwrap();
        let scores: Vec<f64> = cands
            .iter()
            .map(|c| d.product_score(&m.params, &z, c).unwrap())
            .collect();
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
        assert_eq!(dist.argmax(), best);
    }

    #[test]
    fn destination_probabilities_from_hand_set_logits() {
        // One hidden unit: logit = relu(z_src + z_dst) with z on a single axis.
        let m = model("", 1);
        let d = &m.decoder;
        let mut p = m.params.clone();
        set(&mut p, d.product_src, &[1.0]);
        set(&mut p, d.product_dst, &[1.0]);
        set(&mut p, d.product_f, &[1.0]);
        let dist = d
            .destination_distribution(&p, &[0.5], &[vec![0.5], vec![0.5 + 3f64.ln()]])
            .unwrap();
        let probs = dist.probabilities();
        assert!((probs[0] - 0.25).abs() < 1e-12 && (probs[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn time_head_softplus_at_zero() {
        let m = model("", 3);
        let d = &m.decoder;
        let mut p = m.params.clone();
        let w = d.time_head.weight;
        let b = d.time_head.bias.unwrap();
        p.value_mut(w).data.iter_mut().for_each(|x| *x = 0.0);
        p.value_mut(b).data[0] = 0.0;
        let (time, heads) = d.time_msg_params(&p, &[0.1, 0.2, 0.3], None).unwrap();
        assert!((time.rate - std::f64::consts::LN_2).abs() < 1e-4);
        assert!(heads.is_empty());
    }

    #[test]
    fn heads_follow_schema() {
        let m = model("cat:3,num,cat:2", 3);
        let d = &m.decoder;
        let h0 = [0.2, -0.1, 0.4];
        let r = Realized {
            delta: 0.5,
            features: vec![2.0, -0.7, 1.0],
        };
        let (_, heads) = d.time_msg_params(&m.params, &h0, Some(&r)).unwrap();
        assert_eq!(heads.len(), 3);
        assert!(matches!(&heads[0], FeatureHeadParams::Categorical(c) if c.len() == 3));
        assert!(matches!(&heads[1], FeatureHeadParams::Gmm(g) if g.components.len() == 2));
        assert!(matches!(&heads[2], FeatureHeadParams::Categorical(c) if c.len() == 2));
        let (_, greedy) = d.time_msg_params(&m.params, &h0, None).unwrap();
        assert_eq!(greedy.len(), 3);
        let short = Realized {
            delta: 0.5,
            features: vec![1.0],
        };
        assert!(d.time_msg_params(&m.params, &h0, Some(&short)).is_err());
    }

    #[test]
    fn equal_gmm_weight_logits_give_uniform_mixture() {
        let m = model("num", 3);
        let d = &m.decoder;
        let mut p = m.params.clone();
        let head = d.feature_heads[0];
        // Zero the weight-logit rows and biases of the GMM head.
        let w = p.value_mut(head.weight);
        for r in 4..6 {
            w.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
        p.value_mut(head.bias.unwrap()).data[4..6]
            .iter_mut()
            .for_each(|x| *x = 0.0);
        let (_, heads) = d.time_msg_params(&p, &[0.3, 0.3, 0.3], None).unwrap();
        let FeatureHeadParams::Gmm(g) = &heads[0] else { panic!() };
        for c in &g.components {
            assert!((c.weight - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn teacher_forced_tape_matches_value_level_heads() {
        let m = model("cat:2,num", 3);
        let d = &m.decoder;
        let h0 = vec![0.5, -0.4, 0.1];
        let r = Realized {
            delta: 0.8,
            features: vec![1.0, 0.3],
        };
        let (time, heads) = d.time_msg_params(&m.params, &h0, Some(&r)).unwrap();
        let want = time.log_density(0.8).unwrap()
            + heads[0].log_likelihood(1.0).unwrap()
            + heads[1].log_likelihood(0.3).unwrap();
        let mut tape = Tape::new(&m.params);
        let h = tape.constant(Matrix::row_vector(h0));
        let ll = d.tail_log_likelihood(&mut tape, h, &[0.8], &[vec![1.0, 0.3]]).unwrap();
        let got: f64 = tape.value(ll).data.iter().sum();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}
