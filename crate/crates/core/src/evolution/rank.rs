use std::cmp::Ordering;

/// `a` dominates `b` under minimization of both objectives.
pub fn dominates(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Non-dominated sorting with crowding distance over `(fitness, complexity)`.
///
/// Returns `(front, crowding)` per input. Front 0 is the non-dominated set;
/// the extremes of every front get infinite crowding distance.
pub fn nsga2_rank(points: &[(f64, usize)]) -> Vec<(usize, f64)> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(points[i], points[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(points[j], points[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut out = vec![(0usize, 0.0f64); n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut front = 0;
    while !current.is_empty() {
        crowding(points, &current, &mut out);
        let mut next = Vec::new();
        for &i in &current {
            out[i].0 = front;
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        current = next;
        front += 1;
    }
    out
}

fn crowding(points: &[(f64, usize)], members: &[usize], out: &mut [(usize, f64)]) {
    for &i in members {
        out[i].1 = 0.0;
    }
    if members.len() <= 2 {
        for &i in members {
            out[i].1 = f64::INFINITY;
        }
        return;
    }
    let objectives: [fn(&(f64, usize)) -> f64; 2] = [|p| p.0, |p| p.1 as f64];
    for obj in objectives {
        let mut idx = members.to_vec();
        idx.sort_by(|&a, &b| obj(&points[a]).total_cmp(&obj(&points[b])).then(a.cmp(&b)));
        let lo = obj(&points[idx[0]]);
        let hi = obj(&points[*idx.last().expect("non-empty")]);
        out[idx[0]].1 = f64::INFINITY;
        out[*idx.last().expect("non-empty")].1 = f64::INFINITY;
        let range = hi - lo;
        if !(range > 0.0 && range.is_finite()) {
            continue;
        }
        for w in 1..idx.len() - 1 {
            let gap = (obj(&points[idx[w + 1]]) - obj(&points[idx[w - 1]])) / range;
            out[idx[w]].1 += gap;
        }
    }
}

/// Selection order: lower front first, then larger crowding distance.
pub fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.0.cmp(&b.0).then_with(|| b.1.total_cmp(&a.1))
}
