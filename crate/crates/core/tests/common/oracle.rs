//! Plain nested-loop reference of the full network. Reads parameter values
//! by name and shares no code with the library's forward pass.

use ocn::data::{Example, Limits};
use ocn::numerics::ParamSet;

type Mat = Vec<Vec<f64>>; // row-major, rows × cols

const SEP: usize = 2;

fn param(params: &ParamSet, name: &str) -> Mat {
    let m = params
        .by_name(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn vector(params: &ParamSet, name: &str) -> Vec<f64> {
    param(params, name).into_iter().map(|r| r[0]).collect()
}

fn cols(m: &Mat) -> usize {
    m[0].len()
}

fn column(m: &Mat, j: usize) -> Vec<f64> {
    m.iter().map(|r| r[j]).collect()
}

fn from_columns(columns: &[Vec<f64>]) -> Mat {
    let rows = columns[0].len();
    (0..rows)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect()
}

fn stack(parts: &[&Mat]) -> Mat {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

fn mat_vec(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| {
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            s
        })
        .collect()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), cols(b));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `act(W x_j + b)` for every column `j` of `x`.
fn dense(w: &Mat, b: &[f64], x: &Mat, act: fn(f64) -> f64) -> Mat {
    let outs: Vec<Vec<f64>> = (0..cols(x))
        .map(|j| {
            mat_vec(w, &column(x, j))
                .iter()
                .zip(b)
                .map(|(z, bb)| act(z + bb))
                .collect()
        })
        .collect();
    from_columns(&outs)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Full trilinear attention, softmax down each column.
fn attention(u: &Mat, v: &Mat, w: &[f64]) -> Mat {
    let d = u.len();
    let (n, m) = (cols(u), cols(v));
    let mut out = vec![vec![0.0; m]; n];
    for j in 0..m {
        let mut scores = vec![0.0; n];
        for (i, s) in scores.iter_mut().enumerate() {
            for r in 0..d {
                *s += w[r] * u[r][i] + w[d + r] * v[r][j] + w[2 * d + r] * u[r][i] * v[r][j];
            }
        }
        for (i, p) in softmax(&scores).into_iter().enumerate() {
            out[i][j] = p;
        }
    }
    out
}

fn elementwise(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect())
        .collect()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn skim(params: &ParamSet, ids: &[usize]) -> Mat {
    let tok = param(params, "skimmer.token_embedding");
    let pos = param(params, "skimmer.position_embedding");
    let w = param(params, "skimmer.mix_weight");
    let b = vector(params, "skimmer.mix_bias");
    let d = tok.len();
    let len = ids.len();
    let emb: Vec<Vec<f64>> = (0..len)
        .map(|j| (0..d).map(|r| tok[r][ids[j]] + pos[r][j]).collect())
        .collect();
    let mut ctx = vec![0.0; d];
    for e in &emb {
        for r in 0..d {
            ctx[r] += e[r] / len as f64;
        }
    }
    let outs: Vec<Vec<f64>> = emb
        .iter()
        .map(|e| {
            let mut x = e.clone();
            x.extend_from_slice(&ctx);
            x.extend((0..d).map(|r| e[r] * ctx[r]));
            mat_vec(&w, &x)
                .iter()
                .zip(&b)
                .map(|(z, bb)| relu(z + bb))
                .collect()
        })
        .collect();
    from_columns(&outs)
}

fn slice(m: &Mat, start: usize, end: usize) -> Mat {
    m.iter().map(|r| r[start..end].to_vec()).collect()
}

/// Option scores and probabilities for one example.
pub fn reference_forward(
    params: &ParamSet,
    limits: Limits,
    ablate: bool,
    ex: &Example,
) -> (Vec<f64>, Vec<f64>) {
    let k_count = ex.options.len();
    let art = &ex.article[..ex.article.len().min(limits.article)];
    let que = &ex.question[..ex.question.len().min(limits.question)];

    let mut passages = Vec::new();
    let mut questions = Vec::new();
    let mut features = Vec::new();
    for opt in &ex.options {
        let opt = &opt[..opt.len().min(limits.option)];
        let mut ids = art.to_vec();
        ids.push(SEP);
        ids.extend_from_slice(que);
        ids.push(SEP);
        ids.extend_from_slice(opt);
        let h = skim(params, &ids);
        let (a, q) = (art.len(), que.len());
        let p = slice(&h, 0, a);
        let qm = slice(&h, a + 1, a + 1 + q);
        let om = slice(&h, a + 2 + q, ids.len());
        let f: Mat = qm
            .iter()
            .zip(&om)
            .map(|(x, y)| [x.as_slice(), y.as_slice()].concat())
            .collect();
        passages.push(p);
        questions.push(qm);
        features.push(f);
    }

    let mut scores = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let f = &features[k];
        let correlated = if ablate {
            f.clone()
        } else {
            let v_o = vector(params, "head.compare_att");
            let mut blocks = Vec::new();
            for l in (0..k_count).filter(|&l| l != k) {
                let att = attention(&features[l], f, &v_o);
                let gathered = mat_mul(&features[l], &att);
                blocks.push(elementwise(f, &gathered, |a, b| a - b));
                blocks.push(elementwise(f, &gathered, |a, b| a * b));
            }
            let mut parts = vec![f];
            parts.extend(blocks.iter());
            let corr = dense(
                &param(params, "head.correlation_weight"),
                &vector(params, "head.correlation_bias"),
                &stack(&parts),
                f64::tanh,
            );
            let qm = &questions[k];
            let v_a = vector(params, "head.question_pool");
            let pool_scores: Vec<f64> = (0..cols(qm))
                .map(|j| (0..qm.len()).map(|r| qm[r][j] * v_a[r]).sum())
                .collect();
            let dist = softmax(&pool_scores);
            let q_tilde: Vec<f64> = (0..qm.len())
                .map(|r| (0..cols(qm)).map(|j| qm[r][j] * dist[j]).sum())
                .collect();
            let q_rep: Mat = q_tilde.iter().map(|&x| vec![x; cols(f)]).collect();
            let gate = dense(
                &param(params, "head.gate_weight"),
                &vector(params, "head.gate_bias"),
                &stack(&[f, &corr, &q_rep]),
                sigmoid,
            );
            let mut out = f.clone();
            for r in 0..out.len() {
                for j in 0..cols(f) {
                    out[r][j] = gate[r][j] * f[r][j] + (1.0 - gate[r][j]) * corr[r][j];
                }
            }
            out
        };

        let p = &passages[k];
        let v_p = vector(params, "head.reread_att");
        let a_c = attention(&correlated, p, &v_p);
        let a_p = attention(p, &correlated, &v_p);
        let summary = mat_mul(&correlated, &a_c);
        let attended = mat_mul(&stack(&[p, &summary]), &a_p);
        let reread = dense(
            &param(params, "head.reread_weight"),
            &vector(params, "head.reread_bias"),
            &stack(&[&correlated, &attended]),
            relu,
        );

        let self_att = attention(&reread, &reread, &vector(params, "head.self_att"));
        let rs = mat_mul(&reread, &self_att);
        let diff = elementwise(&reread, &rs, |a, b| a - b);
        let prod = elementwise(&reread, &rs, |a, b| a * b);
        let full = dense(
            &param(params, "head.fusion_weight"),
            &vector(params, "head.fusion_bias"),
            &stack(&[&reread, &rs, &diff, &prod]),
            relu,
        );
        let v_s = vector(params, "head.score");
        let mut score = 0.0;
        for (r, row) in full.iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            score += v_s[r] * max;
        }
        scores.push(score);
    }
    let probs = softmax(&scores);
    (scores, probs)
}
