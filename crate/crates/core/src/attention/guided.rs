use crate::error::{Error, Result};

use super::{attention, masked_attention, AttentionMask, TokenMatrix};

/// Query, key and value projections of one token set.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub q: TokenMatrix,
    pub k: TokenMatrix,
    pub v: TokenMatrix,
}

impl Qkv {
    pub fn new(q: TokenMatrix, k: TokenMatrix, v: TokenMatrix) -> Result<Self> {
        if q.n() != k.n() || k.n() != v.n() || q.d() != k.d() {
            return Err(Error::Shape(format!(
                "q {}x{}, k {}x{}, v {}x{}",
                q.n(),
                q.d(),
                k.n(),
                k.d(),
                v.n(),
                v.d()
            )));
        }
        Ok(Self { q, k, v })
    }

    pub fn empty(dk: usize, dv: usize) -> Self {
        Self {
            q: TokenMatrix::empty(dk),
            k: TokenMatrix::empty(dk),
            v: TokenMatrix::empty(dv),
        }
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    fn same_shape(&self, other: &Qkv) -> bool {
        self.q.n() == other.q.n()
            && self.q.d() == other.q.d()
            && self.v.d() == other.v.d()
    }
}

/// Projections of both branches, for frame tokens and for the tokens of the
/// additional references.
///
/// `ref_indices[i]` is the row of the frame token sharing the position of
/// reference token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTokens {
    pub recon: Qkv,
    pub recon_refs: Qkv,
    pub style: Qkv,
    pub style_refs: Qkv,
    pub ref_indices: Vec<usize>,
}

impl BranchTokens {
    pub fn new(recon: Qkv, recon_refs: Qkv, style: Qkv, style_refs: Qkv, ref_indices: Vec<usize>) -> Result<Self> {
        if !recon.same_shape(&style) {
            return Err(Error::Shape("reconstruction and stylization tokens differ in shape".into()));
        }
        if recon_refs.n() != style_refs.n() || (recon_refs.n() > 0 && !recon_refs.same_shape(&style_refs)) {
            return Err(Error::Shape("reference token sets differ between branches".into()));
        }
        if ref_indices.len() != style_refs.n() {
            return Err(Error::Shape(format!(
                "{} reference indices for {} reference tokens",
                ref_indices.len(),
                style_refs.n()
            )));
        }
        if style_refs.n() > 0 && (style_refs.q.d() != style.q.d() || style_refs.v.d() != style.v.d()) {
            return Err(Error::Shape("reference tokens differ in width from frame tokens".into()));
        }
        if let Some(&i) = ref_indices.iter().find(|&&i| i >= style.n()) {
            return Err(Error::Index(format!("reference index {i} of {} frame tokens", style.n())));
        }
        Ok(Self {
            recon,
            recon_refs,
            style,
            style_refs,
            ref_indices,
        })
    }

    /// Frame tokens per branch.
    pub fn n_main(&self) -> usize {
        self.style.n()
    }

    /// Additional-reference tokens per branch.
    pub fn n_refs(&self) -> usize {
        self.style_refs.n()
    }

    fn style_kv(&self) -> Result<(TokenMatrix, TokenMatrix)> {
        Ok((
            self.style.k.concat(&self.style_refs.k)?,
            self.style.v.concat(&self.style_refs.v)?,
        ))
    }
}

/// Reconstruction-branch attention: frame tokens attend only among
/// themselves; reference tokens attend to frame and reference tokens.
pub fn isolated_attention(bt: &BranchTokens) -> Result<(TokenMatrix, TokenMatrix)> {
    let r = &bt.recon;
    let main = attention(&r.q, &r.k, &r.v)?;
    if bt.n_refs() == 0 {
        return Ok((main, TokenMatrix::empty(r.v.d())));
    }
    let refs = &bt.recon_refs;
    let keys = r.k.concat(&refs.k)?;
    let values = r.v.concat(&refs.v)?;
    Ok((main, attention(&refs.q, &keys, &values)?))
}

/// Blends reconstruction-branch dynamics into the stylization reference
/// values: `V_R + xi (V[i_R] - V_R) + (1 - xi) (V^r[i_R] - V^r_R)`.
///
/// Evaluated as `(1 - xi) (V_R + (V^r[i_R] - V^r_R)) + xi V[i_R]` so both
/// endpoints are exact.
pub fn inject_dynamics(bt: &BranchTokens, xi: f32) -> Result<TokenMatrix> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Config(format!("xi must lie in [0, 1], got {xi}")));
    }
    let d = bt.style_refs.v.d();
    let mut data = Vec::with_capacity(bt.n_refs() * d);
    for (i, &src) in bt.ref_indices.iter().enumerate() {
        let vs_ref = bt.style_refs.v.row(i);
        let vr_ref = bt.recon_refs.v.row(i);
        let vs_at = bt.style.v.row(src);
        let vr_at = bt.recon.v.row(src);
        for c in 0..d {
            let recon_dynamics = vs_ref[c] + (vr_at[c] - vr_ref[c]);
            data.push((1.0 - xi) * recon_dynamics + xi * vs_at[c]);
        }
    }
    bt.style_refs.v.with_data(d, data)
}

fn two_part(
    q_main: &TokenMatrix,
    q_refs: &TokenMatrix,
    keys: &TokenMatrix,
    values: &TokenMatrix,
    m_ref: &AttentionMask,
) -> Result<TokenMatrix> {
    let main = masked_attention(q_main, keys, values, m_ref)?;
    if q_refs.n() == 0 {
        return Ok(main);
    }
    main.concat(&attention(q_refs, keys, values)?)
}

/// Stylization-branch attention with its own queries and keys: frame tokens
/// use masked attention over frame and reference tokens, reference tokens use
/// unmasked attention over the same sequence.
///
/// `m_ref` is `n_main x (n_main + n_refs)`. Dynamics must already be injected
/// into `bt.style_refs.v`.
pub fn out1(bt: &BranchTokens, m_ref: &AttentionMask) -> Result<TokenMatrix> {
    let (keys, values) = bt.style_kv()?;
    two_part(&bt.style.q, &bt.style_refs.q, &keys, &values, m_ref)
}

/// As [`out1`], but queries and keys come from the reconstruction branch while
/// values stay with the stylization branch.
pub fn out2(bt: &BranchTokens, m_ref: &AttentionMask) -> Result<TokenMatrix> {
    let keys = bt.recon.k.concat(&bt.recon_refs.k)?;
    let values = bt.style.v.concat(&bt.style_refs.v)?;
    two_part(&bt.recon.q, &bt.recon_refs.q, &keys, &values, m_ref)
}

/// One masked attention over all stylization tokens, typically with the flow
/// correspondence mask combined with the reference mask.
pub fn out3(bt: &BranchTokens, m_combined: &AttentionMask) -> Result<TokenMatrix> {
    let queries = bt.style.q.concat(&bt.style_refs.q)?;
    let (keys, values) = bt.style_kv()?;
    masked_attention(&queries, &keys, &values, m_combined)
}

/// `(1 - beta - gamma) o1 + beta o2 + gamma o3`.
pub fn aggregate(o1: &TokenMatrix, o2: &TokenMatrix, o3: &TokenMatrix, beta: f32, gamma: f32) -> Result<TokenMatrix> {
    if !(beta >= 0.0 && gamma >= 0.0 && beta + gamma <= 1.0) {
        return Err(Error::Config(format!(
            "aggregation weights need beta, gamma >= 0 and beta + gamma <= 1, got {beta}, {gamma}"
        )));
    }
    if o1.n() != o2.n() || o1.n() != o3.n() || o1.d() != o2.d() || o1.d() != o3.d() {
        return Err(Error::Shape("aggregated outputs differ in shape".into()));
    }
    if beta == 0.0 && gamma == 0.0 {
        return Ok(o1.clone());
    }
    let base = 1.0 - beta - gamma;
    let data = o1
        .data()
        .iter()
        .zip(o2.data())
        .zip(o3.data())
        .map(|((&a, &b), &c)| base * a + beta * b + gamma * c)
        .collect();
    o1.with_data(o1.d(), data)
}

/// Unmasked attention of `query` over the sequence-concatenated reference
/// embeddings, which serve as both keys and values.
pub fn cross_attention_concat(query: &TokenMatrix, embeddings: &[TokenMatrix]) -> Result<TokenMatrix> {
    cross_attention_concat_kv(query, embeddings, embeddings)
}

/// Unmasked attention over per-reference key and value projections,
/// concatenated in reference order.
pub fn cross_attention_concat_kv(query: &TokenMatrix, keys: &[TokenMatrix], values: &[TokenMatrix]) -> Result<TokenMatrix> {
    if keys.is_empty() {
        return Err(Error::Config("cross-attention needs at least one reference embedding".into()));
    }
    if keys.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} key sets but {} value sets",
            keys.len(),
            values.len()
        )));
    }
    let k = TokenMatrix::concat_all(&keys.iter().collect::<Vec<_>>())?;
    let v = TokenMatrix::concat_all(&values.iter().collect::<Vec<_>>())?;
    attention(query, &k, &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::TokenPos;

    fn rows(d: usize, v: &[f32], frame: usize) -> TokenMatrix {
        let n = v.len() / d;
        TokenMatrix::new(d, v.to_vec(), (0..n).map(|i| TokenPos::new(frame, 0, i)).collect()).unwrap()
    }

    fn scalar_branch(vs_ref: f32, vs_at: f32, vr_at: f32, vr_ref: f32) -> BranchTokens {
        let main = |v: f32| Qkv::new(rows(1, &[0.0], 0), rows(1, &[0.0], 0), rows(1, &[v], 0)).unwrap();
        let refs = |v: f32| Qkv::new(rows(1, &[0.0], 1), rows(1, &[0.0], 1), rows(1, &[v], 1)).unwrap();
        BranchTokens::new(main(vr_at), refs(vr_ref), main(vs_at), refs(vs_ref), vec![0]).unwrap()
    }

    #[test]
    fn dynamics_injection_arithmetic() {
        let bt = scalar_branch(1.0, 3.0, 5.0, 4.0);
        assert_eq!(inject_dynamics(&bt, 0.5).unwrap().data(), &[2.5]);
        assert_eq!(inject_dynamics(&bt, 1.0).unwrap().data(), &[3.0]);
        assert_eq!(inject_dynamics(&bt, 0.0).unwrap().data(), &[1.0 + (5.0 - 4.0)]);
        assert!(matches!(inject_dynamics(&bt, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn aggregate_corners_and_validation() {
        let a = rows(2, &[1.0, 2.0], 0);
        let b = rows(2, &[-3.0, 0.5], 0);
        let c = rows(2, &[7.0, 7.0], 0);
        assert_eq!(aggregate(&a, &b, &c, 0.0, 0.0).unwrap(), a);
        assert_eq!(aggregate(&a, &b, &c, 1.0, 0.0).unwrap().data(), b.data());
        assert_eq!(aggregate(&a, &b, &c, 0.0, 1.0).unwrap().data(), c.data());
        assert_eq!(aggregate(&a, &a, &a, 0.3, 0.2).unwrap().data(), a.data());
        assert!(matches!(aggregate(&a, &b, &c, 0.7, 0.4), Err(Error::Config(_))));
        assert!(matches!(aggregate(&a, &b, &c, -0.1, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_references_reduce_to_self_attention() {
        let q = rows(2, &[0.1, 0.2, -0.3, 0.4], 0);
        let k = rows(2, &[0.5, -0.6, 0.7, 0.8], 0);
        let v = rows(1, &[1.0, -1.0], 0);
        let main = Qkv::new(q.clone(), k.clone(), v.clone()).unwrap();
        let bt = BranchTokens::new(main.clone(), Qkv::empty(2, 1), main, Qkv::empty(2, 1), vec![]).unwrap();
        let plain = attention(&q, &k, &v).unwrap();
        let (r, rr) = isolated_attention(&bt).unwrap();
        assert_eq!(r, plain);
        assert_eq!(rr.n(), 0);
        assert_eq!(out1(&bt, &AttentionMask::full(2, 2)).unwrap(), plain);
    }

    #[test]
    fn single_style_token_returns_its_value_in_out2() {
        let recon = Qkv::new(rows(2, &[3.0, -1.0], 0), rows(2, &[0.2, 0.9], 0), rows(2, &[8.0, 8.0], 0)).unwrap();
        let style = Qkv::new(rows(2, &[0.0, 1.0], 0), rows(2, &[1.0, 0.0], 0), rows(2, &[4.0, -2.0], 0)).unwrap();
        let bt = BranchTokens::new(recon, Qkv::empty(2, 2), style, Qkv::empty(2, 2), vec![]).unwrap();
        assert_eq!(out2(&bt, &AttentionMask::full(1, 1)).unwrap().data(), &[4.0, -2.0]);
    }

    #[test]
    fn cross_attention_cases() {
        let q = rows(2, &[0.3, -0.7, 1.1, 0.2], 0);
        let e = rows(2, &[0.5, 0.1, -0.4, 0.9, 1.5, -1.0], 1);
        let once = cross_attention_concat(&q, std::slice::from_ref(&e)).unwrap();
        assert_eq!(once, attention(&q, &e, &e).unwrap());
        let twice = cross_attention_concat(&q, &[e.clone(), e.clone()]).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-6);
        assert!(matches!(cross_attention_concat(&q, &[]), Err(Error::Config(_))));
        let wrong = rows(3, &[1.0, 2.0, 3.0], 1);
        assert!(matches!(cross_attention_concat(&q, &[wrong]), Err(Error::Shape(_))));
    }

    #[test]
    fn branch_validation() {
        let a = Qkv::new(rows(2, &[0.0, 1.0], 0), rows(2, &[1.0, 0.0], 0), rows(2, &[4.0, -2.0], 0)).unwrap();
        let b = Qkv::new(rows(2, &[0.0, 1.0, 1.0, 1.0], 0), rows(2, &[1.0, 0.0, 1.0, 1.0], 0), rows(2, &[4.0, -2.0, 1.0, 1.0], 0)).unwrap();
        assert!(BranchTokens::new(a.clone(), Qkv::empty(2, 2), b, Qkv::empty(2, 2), vec![]).is_err());
        let r = Qkv::new(rows(2, &[0.0, 1.0], 1), rows(2, &[1.0, 0.0], 1), rows(2, &[4.0, -2.0], 1)).unwrap();
        assert!(matches!(
            BranchTokens::new(a.clone(), r.clone(), a, r, vec![3]),
            Err(Error::Index(_))
        ));
    }
}
