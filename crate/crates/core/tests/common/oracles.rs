//! Brute-force reference implementations of the metrics.

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn occurrences(hay: &[String], gram: &[String]) -> usize {
    if gram.len() > hay.len() {
        return 0;
    }
    (0..=hay.len() - gram.len()).filter(|&i| hay[i..i + gram.len()] == *gram).count()
}

/// Clipped precision by scanning: every distinct candidate n-gram is counted
/// in the candidate and each reference by sliding comparison.
fn precision_oracle(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let mut distinct: Vec<&[String]> = Vec::new();
    for i in 0..=cand.len() - n {
        let g = &cand[i..i + n];
        if !distinct.contains(&g) {
            distinct.push(g);
        }
    }
    let mut matched = 0;
    for g in distinct {
        let in_cand = occurrences(cand, g);
        let best_ref = refs.iter().map(|r| occurrences(r, g)).max().unwrap_or(0);
        matched += in_cand.min(best_ref);
    }
    (matched, cand.len() + 1 - n)
}

pub fn bleu2_oracle(cand: &str, refs: &[&str]) -> f64 {
    let c = toks(cand);
    let rs: Vec<Vec<String>> = refs.iter().map(|r| toks(r)).collect();
    if c.is_empty() || rs.is_empty() {
        return 0.0;
    }
    let (m1, t1) = precision_oracle(&c, &rs, 1);
    let (m2, t2) = precision_oracle(&c, &rs, 2);
    if m1 == 0 || m2 == 0 {
        return 0.0;
    }
    let mut best = rs[0].len();
    for r in &rs {
        let d = (r.len() as i64 - c.len() as i64).abs();
        let bd = (best as i64 - c.len() as i64).abs();
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c.len() > best { 1.0 } else { (1.0 - best as f64 / c.len() as f64).exp() };
    bp * ((m1 * m2) as f64 / (t1 * t2) as f64).sqrt()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == *s))
}

/// Longest common subsequence by enumerating every subset of the candidate.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = len;
        }
    }
    best
}

fn f1(overlap: usize, c: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c as f64;
    let rc = overlap as f64 / r as f64;
    2.0 * p * rc / (p + rc)
}

pub fn rouge_l_oracle(cand: &str, reference: &str) -> f64 {
    let (c, r) = (toks(cand), toks(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    f1(lcs_oracle(&c, &r), c.len(), r.len())
}

/// Multiset overlap by greedily consuming matching reference tokens.
pub fn knowledge_f1_oracle(cand: &str, reference: &str) -> f64 {
    let (c, r) = (toks(cand), toks(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; r.len()];
    let mut overlap = 0;
    for t in &c {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *t) {
            used[j] = true;
            overlap += 1;
        }
    }
    f1(overlap, c.len(), r.len())
}

/// Rank as 1 + (#smaller) + (#equal - 1) / 2.
pub fn rank_oracle(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let smaller = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn rank_difference_formula(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (rank_oracle(xs), rank_oracle(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
