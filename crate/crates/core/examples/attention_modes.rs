//! Compares the attention outputs of a stylization branch that sees two
//! extra reference tokens: isolation, dynamics injection and aggregation.

use flowstyle::attention::{
    aggregate, inject_dynamics, isolated_attention, out1, out2, out3, AttentionMask, BranchTokens, Qkv, TokenMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> TokenMatrix {
    TokenMatrix::from_rows(d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn qkv(rng: &mut ChaCha8Rng, n: usize) -> Qkv {
    Qkv::new(random(rng, n, 4), random(rng, n, 4), random(rng, n, 3)).unwrap()
}

fn main() -> flowstyle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, nr) = (6, 2);
    let bt = BranchTokens::new(qkv(&mut rng, n), qkv(&mut rng, nr), qkv(&mut rng, n), qkv(&mut rng, nr), vec![2, 5])?;

    let (main, refs) = isolated_attention(&bt)?;
    println!("isolated: {} main rows ignore the refs, {} ref rows see everything", main.n(), refs.n());

    for xi in [0.0, 0.5, 1.0] {
        let v = inject_dynamics(&bt, xi)?;
        println!("xi = {xi}: injected ref value row 0 = {:?}", v.row(0));
    }

    // main tokens 0..3 may not look at the second reference
    let m_ref = AttentionMask::from_fn(n, n + nr, |i, j| j < n || !(i < 3 && j == n + 1));
    let m_combined = AttentionMask::from_fn(n + nr, n + nr, |i, j| i.abs_diff(j) <= 2 || j >= n);
    let (o1, o2, o3) = (out1(&bt, &m_ref)?, out2(&bt, &m_ref)?, out3(&bt, &m_combined)?);
    println!("|out1 - out2| = {:.4}, |out1 - out3| = {:.4}", o1.max_abs_diff(&o2), o1.max_abs_diff(&o3));
    for (beta, gamma) in [(0.0, 0.0), (0.3, 0.0), (0.3, 0.2)] {
        let out = aggregate(&o1, &o2, &o3, beta, gamma)?;
        println!("beta {beta}, gamma {gamma}: first row {:?}", out.row(0));
    }
    Ok(())
}
