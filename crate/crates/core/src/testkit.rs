//! Reference oracles and random generators for the test suites.
//!
//! Oracles are written from the textbook definitions by direct enumeration
//! (all subsets, all sign flips, all permutations, all pairs), deliberately
//! sharing no code with the production implementations.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::flow::{Edge, Node, NodeId, SurveyGraph};
use crate::stats::Metric;
use crate::store::ResponseMatrix;

const EPS: f64 = 1e-9;

fn mid_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Rank-sum statistic and two-tailed permutation p by enumerating every
/// assignment of the pooled observations to group `a`.
pub fn rank_sum_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let r = mid_ranks(&pooled);
    let n = pooled.len();
    let na = a.len();
    let w: f64 = r[..na].iter().sum();
    let mean = na as f64 * (n as f64 + 1.0) / 2.0;
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        total += 1;
        if (s - mean).abs() >= (w - mean).abs() - EPS {
            hit += 1;
        }
    }
    (w, hit as f64 / total as f64)
}

/// W+ and two-tailed p over all 2^n sign assignments.
pub fn signed_rank_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let r = mid_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let n = d.len();
    let wplus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| r[i]).sum();
    let mean = r.iter().sum::<f64>() / 2.0;
    let mut hit = 0u64;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        if (s - mean).abs() >= (wplus - mean).abs() - EPS {
            hit += 1;
        }
    }
    (wplus, hit as f64 / (1u64 << n) as f64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// tau-b by counting pairs.
pub fn kendall_tau_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut tx, mut ty, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let a = sign(x[i] - x[j]);
            let b = sign(y[i] - y[j]);
            s += a * b;
            pairs += 1.0;
            tx += f64::from(a == 0.0);
            ty += f64::from(b == 0.0);
        }
    }
    s / ((pairs - tx) * (pairs - ty)).sqrt()
}

/// Exact two-tailed p for tau without ties: all n! orderings of y.
pub fn kendall_exact_p_oracle(x: &[f64], y: &[f64]) -> f64 {
    let s_of = |y: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                s += sign(x[i] - x[j]) * sign(y[i] - y[j]);
            }
        }
        s
    };
    let observed = s_of(y).abs();
    let mut perm = y.to_vec();
    let (mut hit, mut total) = (0u64, 0u64);
    permutations(&mut perm, 0, &mut |p| {
        total += 1;
        if s_of(p).abs() >= observed - EPS {
            hit += 1;
        }
    });
    hit as f64 / total as f64
}

fn permutations(v: &mut [f64], k: usize, visit: &mut impl FnMut(&[f64])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Pearson chi-square from the expected-count table.
pub fn chi_square_oracle(table: &[Vec<f64>]) -> f64 {
    let total: f64 = table.iter().flatten().sum();
    let mut stat = 0.0;
    for i in 0..table.len() {
        for j in 0..table[0].len() {
            let row: f64 = table[i].iter().sum();
            let col: f64 = table.iter().map(|r| r[j]).sum();
            let e = row * col / total;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    stat
}

/// F from SSB = SST − SSW.
pub fn anova_f_oracle(groups: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = all.iter().sum::<f64>() / all.len() as f64;
    let sst: f64 = all.iter().map(|x| (x - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    let k = groups.len() as f64;
    let n = all.len() as f64;
    ((sst - ssw) / (k - 1.0)) / (ssw / (n - k))
}

/// Alpha from the item covariance matrix: k/(k−1)·(1 − trace/sum).
pub fn cronbach_oracle(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let cov = |a: usize, b: usize| {
        rows.iter()
            .map(|r| (r[a] - means[a]) * (r[b] - means[b]))
            .sum::<f64>()
            / (n - 1.0)
    };
    let mut trace = 0.0;
    let mut sum = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = cov(a, b);
            sum += c;
            if a == b {
                trace += c;
            }
        }
    }
    let k = k as f64;
    k / (k - 1.0) * (1.0 - trace / sum)
}

/// Krippendorff's alpha from explicit value pairs, respondents as raters
/// (units are columns): within-unit pairs weighted by 1/(m_u − 1) against
/// all pairs of pairable values.
pub fn krippendorff_oracle(matrix: &ResponseMatrix, metric: Metric) -> f64 {
    let units: Vec<Vec<f64>> = (0..matrix.cols())
        .map(|j| {
            matrix
                .column(j)
                .into_iter()
                .flatten()
                .map(|v| v as f64)
                .collect::<Vec<_>>()
        })
        .filter(|u| u.len() >= 2)
        .collect();
    let pool: Vec<f64> = units.iter().flatten().copied().collect();
    let n = pool.len() as f64;
    let freq = |v: f64| pool.iter().filter(|x| **x == v).count() as f64;
    let delta = |a: f64, b: f64| -> f64 {
        match metric {
            Metric::Nominal => f64::from(a != b),
            Metric::Interval => (a - b).powi(2),
            Metric::Ordinal => {
                if a == b {
                    return 0.0;
                }
                let (lo, hi) = (a.min(b), a.max(b));
                let mut distinct: Vec<f64> = pool.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                let between: f64 = distinct
                    .iter()
                    .filter(|g| **g >= lo && **g <= hi)
                    .map(|g| freq(*g))
                    .sum();
                (between - (freq(a) + freq(b)) / 2.0).powi(2)
            }
        }
    };
    let mut d_o = 0.0;
    for u in &units {
        let m = u.len() as f64;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j {
                    d_o += delta(u[i], u[j]) / (m - 1.0);
                }
            }
        }
    }
    let mut d_e = 0.0;
    for i in 0..pool.len() {
        for j in 0..pool.len() {
            if i != j {
                d_e += delta(pool[i], pool[j]);
            }
        }
    }
    1.0 - (n - 1.0) * d_o / d_e
}

/// Share of unordered answer pairs that differ.
pub fn differentiation_oracle(row: &[i64]) -> f64 {
    let mut differ = 0.0;
    let mut pairs = 0.0;
    for i in 0..row.len() {
        for j in i + 1..row.len() {
            pairs += 1.0;
            differ += f64::from(row[i] != row[j]);
        }
    }
    differ / pairs
}

/// Likert-style sample of `n` codes in `1..=5`.
pub fn likert_sample(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(1..=5) as f64).collect()
}

/// Sample of `n` distinct reals.
pub fn distinct_sample(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| i as f64 + rng.random_range(0.0..0.5))
        .collect();
    v.shuffle(rng);
    v
}

/// Uniform random complete matrix of codes in the default range.
pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ResponseMatrix {
    let cells: Vec<Vec<i64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(1..=5)).collect())
        .collect();
    ResponseMatrix::from_rows(&cells)
}

/// Arbitrary graph of up to `max_nodes` text nodes with random edges; may be
/// cyclic, disconnected or otherwise invalid.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> SurveyGraph {
    let n = rng.random_range(1..=max_nodes);
    let nodes: Vec<Node> = (0..n).map(|i| Node::text(format!("v{i}"), "")).collect();
    let density = rng.random_range(0.0..0.3);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(density) {
                edges.push(Edge::new(format!("v{a}"), format!("v{b}")));
            }
        }
    }
    SurveyGraph::new(
        "g",
        "",
        NodeId(format!("v{}", rng.random_range(0..n))),
        nodes,
        edges,
    )
}

/// Cycle check by trying, from every node, every simple path.
pub fn has_cycle_oracle(graph: &SurveyGraph) -> bool {
    fn dfs(graph: &SurveyGraph, node: &NodeId, path: &mut Vec<NodeId>) -> bool {
        if path.contains(node) {
            return true;
        }
        path.push(node.clone());
        let found = graph
            .edges
            .iter()
            .filter(|e| &e.from == node && graph.node(&e.to).is_some())
            .any(|e| dfs(graph, &e.to, path));
        path.pop();
        found
    }
    graph
        .nodes
        .iter()
        .any(|n| dfs(graph, &n.id, &mut Vec::new()))
}

/// A random script within the guarded-text idiom: texts and images, coded
/// and acknowledgement questions, free-text and multi-choice questions, and
/// guarded blocks whose guards always select whole groups of branches.
pub fn random_script(rng: &mut impl Rng) -> String {
    let words = [
        "hi",
        "well",
        "ok 😀",
        "fine, thanks",
        "see: here",
        "*****",
        "(a) b",
    ];
    let say = |rng: &mut dyn rand::RngCore| -> String {
        let k = rng.random_range(1..=3);
        (0..k)
            .map(|_| *words.choose(rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let labels = [
        "Trust",
        "Firm reputation (bank)",
        "self-direction",
        "global motivation",
    ];
    let mut out = String::new();
    let segments = rng.random_range(1..=6);
    for _ in 0..segments {
        match rng.random_range(0..6) {
            0 => out.push_str(&format!(
                "{{image}} https://example.org/{}.png\n",
                rng.random_range(0..100)
            )),
            1 => out.push_str(&format!(
                "{{question}} {}?\n{{text}} {}\n",
                say(rng),
                say(rng)
            )),
            2 => {
                let label = labels.choose(rng).expect("non-empty");
                out.push_str(&format!("{{question, multi: {label}}} {}?\n", say(rng)));
                let k = rng.random_range(2..=4);
                for v in 1..=k {
                    out.push_str(&format!("{{answer, value: {v}}} {}\n", say(rng)));
                }
            }
            3 => out.push_str(&format!(
                "{{question}} {}?\n{{answer}} {}\n",
                say(rng),
                say(rng)
            )),
            4 => coded_question(rng, &mut out, &labels, &say),
            _ => {}
        }
        out.push_str(&format!("{{text}} {}\n", say(rng)));
    }
    out
}

fn coded_question(
    rng: &mut impl Rng,
    out: &mut String,
    labels: &[&str],
    say: &impl Fn(&mut dyn rand::RngCore) -> String,
) {
    let mut codes: Vec<i64> = (1..=5).collect();
    codes.shuffle(rng);
    let k = rng.random_range(2..=5);
    codes.truncate(k);
    let widget = [
        None,
        Some("star-rating"),
        Some("emoji"),
        Some("slide"),
        Some("options"),
    ]
    .choose(rng)
    .copied()
    .flatten();
    if rng.random_bool(0.5) {
        out.push_str(&format!(
            "{{question: {}}} {}?\n",
            labels.choose(rng).expect("non-empty"),
            say(rng)
        ));
    } else {
        out.push_str(&format!("{{question}} {}?\n", say(rng)));
    }
    for &c in &codes {
        match widget {
            Some(w) => out.push_str(&format!("{{answer, type: {w}, value: {c}}} {}\n", say(rng))),
            None => out.push_str(&format!("{{answer, value: {c}}} {}\n", say(rng))),
        }
    }
    // classes of branches currently sharing their last block
    let mut classes: Vec<Vec<i64>> = codes.iter().map(|&c| vec![c]).collect();
    for _ in 0..rng.random_range(0..=3) {
        let picked: Vec<usize> = (0..classes.len())
            .filter(|_| rng.random_bool(0.4))
            .collect();
        if picked.is_empty() {
            continue;
        }
        let mut merged: Vec<i64> = picked.iter().flat_map(|&i| classes[i].clone()).collect();
        merged.sort_unstable();
        for &i in picked.iter().rev() {
            classes.remove(i);
        }
        let guard = merged
            .iter()
            .map(i64::to_string)
            .collect::<Vec<_>>()
            .join(" or ");
        let kind = if rng.random_bool(0.8) {
            "text"
        } else {
            "image"
        };
        out.push_str(&format!("{{{kind}, if answer {guard}}} {}\n", say(rng)));
        classes.push(merged);
    }
}
