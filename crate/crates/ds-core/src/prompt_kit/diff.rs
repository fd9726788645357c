//! Unified diff between two texts, 3 lines of context.
//!
//! Texts are split on `\n` so the trailing-newline state is part of the
//! element sequence and a patch application reproduces the target exactly.

const CONTEXT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Equal,
    Delete,
    Insert,
}

/// Unified diff from `old` to `new`. Equal inputs yield an empty string.
pub fn code_diff(old: &str, new: &str) -> String {
    if old == new {
        return String::new();
    }
    let a: Vec<&str> = old.split('\n').collect();
    let b: Vec<&str> = new.split('\n').collect();
    let ops = diff_ops(&a, &b);
    render_hunks(&a, &b, &ops)
}

/// Edit script via longest-common-subsequence dynamic programming.
fn diff_ops(a: &[&str], b: &[&str]) -> Vec<Op> {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![0u32; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[idx(i, j)] = if a[i] == b[j] {
                lcs[idx(i + 1, j + 1)] + 1
            } else {
                lcs[idx(i + 1, j)].max(lcs[idx(i, j + 1)])
            };
        }
    }
    let mut ops = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            ops.push(Op::Equal);
            i += 1;
            j += 1;
        } else if lcs[idx(i + 1, j)] >= lcs[idx(i, j + 1)] {
            ops.push(Op::Delete);
            i += 1;
        } else {
            ops.push(Op::Insert);
            j += 1;
        }
    }
    ops.extend(std::iter::repeat_n(Op::Delete, n - i));
    ops.extend(std::iter::repeat_n(Op::Insert, m - j));
    ops
}

fn render_hunks(a: &[&str], b: &[&str], ops: &[Op]) -> String {
    // Positions of non-equal ops; hunks merge changes separated by at most
    // 2*CONTEXT equal lines.
    let change_idx: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| **op != Op::Equal)
        .map(|(i, _)| i)
        .collect();
    if change_idx.is_empty() {
        return String::new();
    }

    let mut groups: Vec<(usize, usize)> = Vec::new(); // inclusive op ranges
    let mut start = change_idx[0];
    let mut end = change_idx[0];
    for &c in &change_idx[1..] {
        if c - end <= 2 * CONTEXT {
            end = c;
        } else {
            groups.push((start, end));
            start = c;
            end = c;
        }
    }
    groups.push((start, end));

    // Walk ops once, tracking source positions at each op index.
    let mut a_pos = vec![0usize; ops.len() + 1];
    let mut b_pos = vec![0usize; ops.len() + 1];
    for (i, op) in ops.iter().enumerate() {
        a_pos[i + 1] = a_pos[i] + usize::from(*op != Op::Insert);
        b_pos[i + 1] = b_pos[i] + usize::from(*op != Op::Delete);
    }

    let mut out = String::new();
    for (gs, ge) in groups {
        let from = gs.saturating_sub(CONTEXT);
        let to = (ge + CONTEXT + 1).min(ops.len());
        let (a_start, b_start) = (a_pos[from], b_pos[from]);
        let (a_count, b_count) = (a_pos[to] - a_start, b_pos[to] - b_start);
        out.push_str(&format!(
            "@@ -{} +{} @@\n",
            range(a_start, a_count),
            range(b_start, b_count)
        ));
        for k in from..to {
            let (prefix, line) = match ops[k] {
                Op::Equal => (' ', a[a_pos[k]]),
                Op::Delete => ('-', a[a_pos[k]]),
                Op::Insert => ('+', b[b_pos[k]]),
            };
            out.push(prefix);
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn range(start: usize, count: usize) -> String {
    // Unified-diff convention: 1-based start; zero-count ranges report the
    // line before the hunk.
    if count == 0 {
        format!("{start},0")
    } else if count == 1 {
        format!("{}", start + 1)
    } else {
        format!("{},{}", start + 1, count)
    }
}
