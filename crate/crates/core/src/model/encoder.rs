use super::distributor::{CheckedTriple, CheckedVars};
use super::{Space, SPACES};
use crate::diffnum::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Encoded vectors indexed `[kind][space]`, kinds ordered `s, r, t`.
pub type KindBySpace<T> = [[T; 3]; 3];

#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub shared: KindBySpace<Var>,
    pub specific: KindBySpace<Var>,
    /// The single gate vector `σ(W_Iᵀ [ȟ_S, ȟ_H, ȟ_E])` per kind.
    pub shared_gate: [Var; 3],
}

fn kind_inputs(checked: &[CheckedVars; 3], kind: usize) -> [Var; 3] {
    SPACES.map(|sp| {
        let c = &checked[sp as usize];
        [c.s, c.r, c.t][kind]
    })
}

fn gate(g: &mut Graph, concat: Var, w: Var) -> Result<Var> {
    let pre = g.matmul(concat, w)?;
    g.sigmoid(pre)
}

/// Shared and specific gated encodings of the nine checked vectors.
///
/// For each kind `h` the concatenation `[ȟ_S, ȟ_H, ȟ_E]` drives one gate per
/// weight matrix; the shared gate multiplies all three spaces, space `M`'s
/// specific gate only `ȟ_M`.
pub fn encode_vars(
    g: &mut Graph,
    checked: &[CheckedVars; 3],
    w_shared: Var,
    w_specific: [Var; 3],
) -> Result<Encoded> {
    let mut shared = [[checked[0].s; 3]; 3];
    let mut specific = shared;
    let mut shared_gate = [checked[0].s; 3];
    for kind in 0..3 {
        let inputs = kind_inputs(checked, kind);
        let concat = g.concat(&inputs, 1)?;
        let gi = gate(g, concat, w_shared)?;
        shared_gate[kind] = gi;
        for sp in SPACES {
            let m = sp as usize;
            shared[kind][m] = g.mul(inputs[m], gi)?;
            let gs = gate(g, concat, w_specific[m])?;
            specific[kind][m] = g.mul(inputs[m], gs)?;
        }
    }
    Ok(Encoded {
        shared,
        specific,
        shared_gate,
    })
}

fn bind_checked(g: &mut Graph, checked: &[CheckedTriple; 3]) -> Result<[CheckedVars; 3]> {
    let d = checked[0].s.len();
    let mut out = Vec::with_capacity(3);
    for c in checked {
        if c.s.len() != d || c.r.len() != d || c.t.len() != d {
            return Err(Error::shape(
                "encode",
                &[d],
                &[c.s.len(), c.r.len(), c.t.len()],
            ));
        }
        out.push(CheckedVars {
            s: g.input(Tensor::row(c.s.clone()))?,
            r: g.input(Tensor::row(c.r.clone()))?,
            t: g.input(Tensor::row(c.t.clone()))?,
        });
    }
    Ok([out[0], out[1], out[2]])
}

fn collect(g: &Graph, vars: &KindBySpace<Var>) -> KindBySpace<Vec<f64>> {
    vars.map(|row| row.map(|v| g.value(v).data().to_vec()))
}

/// Shared encodings `h_M^I` of one quadruple, `[kind][space]`. `checked` is
/// indexed by [`Space`].
pub fn encode_shared(
    checked: &[CheckedTriple; 3],
    w_shared: &Tensor,
) -> Result<KindBySpace<Vec<f64>>> {
    let mut g = Graph::new();
    let c = bind_checked(&mut g, checked)?;
    let w = g.input(w_shared.clone())?;
    let e = encode_vars(&mut g, &c, w, [w; 3])?;
    Ok(collect(&g, &e.shared))
}

/// Specific encodings `h_M^S`; `w_specific` is indexed by [`Space`].
pub fn encode_specific(
    checked: &[CheckedTriple; 3],
    w_specific: [&Tensor; 3],
) -> Result<KindBySpace<Vec<f64>>> {
    let mut g = Graph::new();
    let c = bind_checked(&mut g, checked)?;
    let ws = [
        g.input(w_specific[Space::Hyperspherical as usize].clone())?,
        g.input(w_specific[Space::Hyperbolic as usize].clone())?,
        g.input(w_specific[Space::Euclidean as usize].clone())?,
    ];
    let e = encode_vars(&mut g, &c, ws[0], ws)?;
    Ok(collect(&g, &e.specific))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::sigmoid_scalar as sig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 4;

    fn random_checked(rng: &mut ChaCha8Rng) -> [CheckedTriple; 3] {
        let mut v = || {
            (0..D)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        std::array::from_fn(|_| CheckedTriple {
            s: v(),
            r: v(),
            t: v(),
        })
    }

    fn random_w(rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            vec![3 * D, D],
            (0..3 * D * D)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    // h_M = ȟ_M[j] · σ(Σ_i concat[i] · W[i, j])
    fn scalar_encode(
        checked: &[CheckedTriple; 3],
        kind: usize,
        space: usize,
        w: &Tensor,
    ) -> Vec<f64> {
        let pick = |c: &CheckedTriple| [&c.s, &c.r, &c.t][kind].clone();
        let concat: Vec<f64> = checked.iter().flat_map(pick).collect();
        let mine = pick(&checked[space]);
        (0..D)
            .map(|j| {
                let mut z = 0.0;
                for (i, c) in concat.iter().enumerate() {
                    z += c * w.data()[i * D + j];
                }
                mine[j] * sig(z)
            })
            .collect()
    }

    #[test]
    fn zero_weights_halve_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_checked(&mut rng);
        let zero = Tensor::zeros(&[3 * D, D]);
        let shared = encode_shared(&c, &zero).unwrap();
        let specific = encode_specific(&c, [&zero; 3]).unwrap();
        for kind in 0..3 {
            for sp in 0..3 {
                let src = [&c[sp].s, &c[sp].r, &c[sp].t][kind];
                let half: Vec<f64> = src.iter().map(|x| 0.5 * x).collect();
                assert_eq!(shared[kind][sp], half);
                assert_eq!(specific[kind][sp], half);
            }
        }
    }

    #[test]
    fn zero_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = CheckedTriple {
            s: vec![0.0; D],
            r: vec![0.0; D],
            t: vec![0.0; D],
        };
        let out = encode_shared(&[z.clone(), z.clone(), z], &random_w(&mut rng)).unwrap();
        assert!(out.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_weights_make_specific_equal_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_checked(&mut rng);
        let w = random_w(&mut rng);
        assert_eq!(
            encode_shared(&c, &w).unwrap(),
            encode_specific(&c, [&w; 3]).unwrap()
        );
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let c = random_checked(&mut rng);
            let wi = random_w(&mut rng);
            let ws = [random_w(&mut rng), random_w(&mut rng), random_w(&mut rng)];
            let shared = encode_shared(&c, &wi).unwrap();
            let specific = encode_specific(&c, [&ws[0], &ws[1], &ws[2]]).unwrap();
            for kind in 0..3 {
                for sp in 0..3 {
                    let a = scalar_encode(&c, kind, sp, &wi);
                    let b = scalar_encode(&c, kind, sp, &ws[sp]);
                    for j in 0..D {
                        assert!((shared[kind][sp][j] - a[j]).abs() <= 1e-12);
                        assert!((specific[kind][sp][j] - b[j]).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
