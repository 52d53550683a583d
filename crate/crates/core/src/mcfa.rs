//! Multiple context fixing attachment.
//!
//! Given one sentence vector per view, the attachment
//!
//! 1. scores each view's own confidence, `rho_k = sigmoid(v_k^T T_k)`;
//! 2. scores how useful view `j` is for fixing view `i`,
//!    `e(i, j) = x^T tanh(v_i^T X_i + (v_j^T X_j) * rho_j)`, normalized with a
//!    softmax over every view `j` (the source itself included);
//! 3. mixes the views into a context `c_i = sum_k a(i, k) v_k^T U_k` after
//!    projecting each into a common space;
//! 4. gates the source per dimension, `w_k = sigmoid([v_k; c_k]^T V_k)`, and
//!    returns `v_k * w_k`.
//!
//! Gates lie strictly inside (0, 1), so a fixed vector keeps the sign of every
//! coordinate and never grows in magnitude.

use rand::Rng;

use crate::encoder::glorot_uniform;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Per-view trainable matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewAttachment {
    /// `T_k`, `[d x 1]`
    pub self_scorer: ParamId,
    /// `X_k`, `[d x d]`
    pub attention_proj: ParamId,
    /// `U_k`, `[d x d]`
    pub context_proj: ParamId,
    /// `V_k`, `[2d x d]`
    pub gate: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McfaParams {
    pub views: Vec<ViewAttachment>,
    /// `x`, `[d x 1]`, shared by every view pair.
    pub scorer: ParamId,
}

impl McfaParams {
    /// Projections and gates Glorot-uniform; `T_k` and `x` start at zero so
    /// usabilities start at 0.5 and attention starts uniform.
    pub fn register(store: &mut ParamStore, d: usize, n_views: usize, rng: &mut impl Rng) -> Self {
        let views = (0..n_views)
            .map(|k| ViewAttachment {
                self_scorer: store.add(format!("mcfa.view{k}.self_scorer"), Tensor::zeros(&[d, 1])),
                attention_proj: store.add(format!("mcfa.view{k}.attention_proj"), glorot_uniform(d, d, d, d, rng)),
                context_proj: store.add(format!("mcfa.view{k}.context_proj"), glorot_uniform(d, d, d, d, rng)),
                gate: store.add(format!("mcfa.view{k}.gate"), glorot_uniform(2 * d, d, 2 * d, d, rng)),
            })
            .collect();
        let scorer = store.add("mcfa.scorer", Tensor::zeros(&[d, 1]));
        McfaParams { views, scorer }
    }

    pub fn find(store: &ParamStore, n_views: usize) -> Result<Self> {
        let get = |name: String| store.find(&name).ok_or_else(|| Error::Format(format!("missing tensor {name}")));
        let views = (0..n_views)
            .map(|k| {
                Ok(ViewAttachment {
                    self_scorer: get(format!("mcfa.view{k}.self_scorer"))?,
                    attention_proj: get(format!("mcfa.view{k}.attention_proj"))?,
                    context_proj: get(format!("mcfa.view{k}.context_proj"))?,
                    gate: get(format!("mcfa.view{k}.gate"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(McfaParams {
            views,
            scorer: get("mcfa.scorer".into())?,
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .views
            .iter()
            .flat_map(|v| [v.self_scorer, v.attention_proj, v.context_proj, v.gate])
            .collect();
        ids.push(self.scorer);
        ids
    }
}

/// What the gate step multiplies by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    #[default]
    Learned,
    /// Replace every gate with exact ones (the fixed vectors equal the inputs).
    Ones,
}

/// Tape handles for every intermediate of one attachment pass.
#[derive(Clone, Debug)]
pub struct FixVars {
    pub self_usability: Vec<Var>,
    pub attention: Vec<Var>,
    pub contexts: Vec<Var>,
    pub gates: Vec<Var>,
    pub altered: Vec<Var>,
}

/// Values of one attachment pass, for inspection and dumping.
#[derive(Clone, Debug, PartialEq)]
pub struct FixReport {
    pub self_usability: Vec<f64>,
    /// Row `i` holds the relative usability of every view for fixing view `i`.
    pub attention: Tensor,
    pub contexts: Vec<Tensor>,
    pub gates: Vec<Tensor>,
    pub unaltered: Vec<Tensor>,
    pub altered: Vec<Tensor>,
}

fn check_views(vectors: &[Var], params: &McfaParams) -> Result<()> {
    if vectors.is_empty() || vectors.len() != params.n_views() {
        return Err(Error::Invalid(format!(
            "attachment has {} views, got {} sentence vectors",
            params.n_views(),
            vectors.len()
        )));
    }
    Ok(())
}

/// `sigmoid(v^T T)`, a one-element tensor.
pub fn self_usability(tape: &mut Tape<'_>, v: Var, scorer: ParamId) -> Result<Var> {
    let t = tape.param(scorer);
    let s = tape.matmul(v, t)?;
    tape.sigmoid(s)
}

/// Rows of the relative-usability matrix; `rho[j]` scales view `j`'s
/// projected term whenever it plays the context role.
pub fn relative_usability(
    tape: &mut Tape<'_>,
    vectors: &[Var],
    rho: &[Var],
    params: &McfaParams,
) -> Result<Vec<Var>> {
    check_views(vectors, params)?;
    if rho.len() != vectors.len() {
        return Err(Error::Invalid(format!(
            "self usability given for {} of {} views",
            rho.len(),
            vectors.len()
        )));
    }
    let projected = vectors
        .iter()
        .zip(&params.views)
        .map(|(&v, p)| {
            let x = tape.param(p.attention_proj);
            tape.matmul(v, x)
        })
        .collect::<Result<Vec<_>>>()?;
    let scaled = projected
        .iter()
        .zip(rho)
        .map(|(&p, &r)| tape.broadcast_scale(p, r))
        .collect::<Result<Vec<_>>>()?;
    let scorer = tape.param(params.scorer);
    let mut rows = Vec::with_capacity(vectors.len());
    for &source in &projected {
        let scores = scaled
            .iter()
            .map(|&ctx| {
                let pre = tape.add(source, ctx)?;
                let h = tape.tanh(pre)?;
                tape.matmul(h, scorer)
            })
            .collect::<Result<Vec<_>>>()?;
        let e = tape.concat(&scores)?;
        rows.push(tape.softmax(e)?);
    }
    Ok(rows)
}

/// `c_i = sum_k attention[i][k] * v_k^T U_k`
pub fn integrate_context(
    tape: &mut Tape<'_>,
    vectors: &[Var],
    attention: &[Var],
    params: &McfaParams,
) -> Result<Vec<Var>> {
    check_views(vectors, params)?;
    let n = vectors.len();
    let d = tape.value(vectors[0]).len();
    let projected = vectors
        .iter()
        .zip(&params.views)
        .map(|(&v, p)| {
            let u = tape.param(p.context_proj);
            tape.matmul(v, u)
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&projected)?;
    let stacked = tape.reshape(stacked, &[n, d])?;
    attention
        .iter()
        .map(|&row| {
            if tape.value(row).len() != n {
                return Err(Error::shape("integrate_context", tape.value(row).shape(), &[n]));
            }
            tape.matmul(row, stacked)
        })
        .collect()
}

/// Gates `sigmoid([v_k; c_k]^T V_k)` and fixed vectors `v_k * gate_k`.
pub fn fix_vectors(
    tape: &mut Tape<'_>,
    vectors: &[Var],
    contexts: &[Var],
    params: &McfaParams,
    mode: GateMode,
) -> Result<(Vec<Var>, Vec<Var>)> {
    check_views(vectors, params)?;
    if contexts.len() != vectors.len() {
        return Err(Error::Invalid(format!(
            "{} contexts for {} views",
            contexts.len(),
            vectors.len()
        )));
    }
    let mut gates = Vec::with_capacity(vectors.len());
    let mut altered = Vec::with_capacity(vectors.len());
    for ((&v, &c), p) in vectors.iter().zip(contexts).zip(&params.views) {
        let gate = match mode {
            GateMode::Learned => {
                let joined = tape.concat(&[v, c])?;
                let w = tape.param(p.gate);
                let pre = tape.matmul(joined, w)?;
                tape.sigmoid(pre)?
            }
            GateMode::Ones => {
                let shape = tape.value(v).shape().to_vec();
                tape.constant(Tensor::ones(&shape))
            }
        };
        gates.push(gate);
        altered.push(tape.hadamard(v, gate)?);
    }
    Ok((gates, altered))
}

/// Runs the four stages in order.
pub fn mcfa_forward(tape: &mut Tape<'_>, vectors: &[Var], params: &McfaParams, mode: GateMode) -> Result<FixVars> {
    check_views(vectors, params)?;
    let self_usability = vectors
        .iter()
        .zip(&params.views)
        .map(|(&v, p)| self_usability(tape, v, p.self_scorer))
        .collect::<Result<Vec<_>>>()?;
    let attention = relative_usability(tape, vectors, &self_usability, params)?;
    let contexts = integrate_context(tape, vectors, &attention, params)?;
    let (gates, altered) = fix_vectors(tape, vectors, &contexts, params, mode)?;
    Ok(FixVars {
        self_usability,
        attention,
        contexts,
        gates,
        altered,
    })
}

impl FixVars {
    pub fn report(&self, tape: &Tape<'_>, vectors: &[Var]) -> FixReport {
        let n = self.attention.len();
        let attention = Tensor::new(
            vec![n, n],
            self.attention.iter().flat_map(|&r| tape.value(r).data().to_vec()).collect(),
        )
        .expect("square attention");
        let vals = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        FixReport {
            self_usability: self.self_usability.iter().map(|&v| tape.value(v).item()).collect(),
            attention,
            contexts: vals(&self.contexts),
            gates: vals(&self.gates),
            unaltered: vals(vectors),
            altered: vals(&self.altered),
        }
    }
}

/// Attachment pass over plain sentence vectors.
pub fn mcfa_forward_values(
    store: &ParamStore,
    params: &McfaParams,
    vectors: &[Tensor],
    mode: GateMode,
) -> Result<FixReport> {
    let mut tape = Tape::new(store);
    let vs: Vec<Var> = vectors.iter().map(|v| tape.constant(v.clone())).collect();
    let fv = mcfa_forward(&mut tape, &vs, params, mode)?;
    Ok(fv.report(&tape, &vs))
}
