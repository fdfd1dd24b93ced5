//! Nelder–Mead simplex search with dimension-adaptive coefficients
//! (reflection 1, expansion 1 + 2/n, contraction 3/4 − 1/(2n), shrink 1 − 1/n).

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Iteration budget shared by the initial run and all restarts.
    pub max_iter: usize,
    /// Absolute tolerance on objective values.
    pub f_tol: f64,
    /// A run also stops when the best value improved by less than `f_tol`
    /// over this many iterations. Zero disables the rule.
    pub stall_window: usize,
    /// Fresh simplices built around the incumbent after a run stops.
    pub restarts: usize,
    pub record_trace: bool,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 2000,
            f_tol: 1e-8,
            stall_window: 0,
            restarts: 1,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each iteration (when requested).
    pub trace: Vec<f64>,
}

struct Vertex {
    x: Vec<f64>,
    f: f64,
}

fn order(a: &Vertex, b: &Vertex) -> Ordering {
    a.f.total_cmp(&b.f).then_with(|| {
        a.x.iter()
            .zip(&b.x)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    })
}

struct Counter<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` starting from `x0`; the initial simplex is `x0` plus
/// `x0 + steps[i]·e_i`.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len(), "one step per coordinate");
    let mut counter = Counter { f, evaluations: 0 };
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut best_x = x0.to_vec();
    let mut best_f = counter.eval(x0);
    let mut converged = false;

    for run in 0..=opts.restarts {
        let before = best_f;
        let (x, fx, conv) = run_simplex(
            &mut counter,
            &best_x,
            best_f,
            steps,
            opts,
            &mut iterations,
            &mut trace,
        );
        // the incumbent is a vertex of every simplex, so this never loses ground
        debug_assert!(fx <= best_f);
        best_x = x;
        best_f = fx;
        converged = conv;
        if iterations >= opts.max_iter {
            break;
        }
        if run > 0 && conv && before - best_f < opts.f_tol {
            break;
        }
    }

    Minimum {
        x: best_x,
        f: best_f,
        iterations,
        evaluations: counter.evaluations,
        converged,
        trace,
    }
}

fn run_simplex<F: FnMut(&[f64]) -> f64>(
    counter: &mut Counter<F>,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    opts: &NelderMeadOptions,
    iterations: &mut usize,
    trace: &mut Vec<f64>,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    if n == 0 {
        return (Vec::new(), f0, true);
    }
    let nf = n as f64;
    let (alpha, gamma, rho, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let shrink = if n == 1 { 0.5 } else { shrink };

    let mut simplex = Vec::with_capacity(n + 1);
    simplex.push(Vertex { x: x0.to_vec(), f: f0 });
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if steps[i] != 0.0 { steps[i] } else { 0.05 };
        let f = counter.eval(&x);
        simplex.push(Vertex { x, f });
    }
    simplex.sort_by(order);

    let mut history: Vec<f64> = Vec::new();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut converged = false;

    while *iterations < opts.max_iter {
        if simplex[n].f - simplex[0].f < opts.f_tol {
            converged = true;
            break;
        }
        if opts.stall_window > 0 && history.len() >= opts.stall_window {
            let old = history[history.len() - opts.stall_window];
            if old - simplex[0].f < opts.f_tol {
                converged = true;
                break;
            }
        }
        *iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(&v.x) {
                *c += xi / nf;
            }
        }
        let worst = &simplex[n];
        let point = |coef: f64, out: &mut Vec<f64>| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(&worst.x) {
                *o = c + coef * (c - w);
            }
        };

        point(alpha, &mut trial);
        let fr = counter.eval(&trial);
        let replacement = if fr < simplex[0].f {
            let reflected = trial.clone();
            point(alpha * gamma, &mut trial);
            let fe = counter.eval(&trial);
            if fe < fr {
                Some(Vertex { x: trial.clone(), f: fe })
            } else {
                Some(Vertex { x: reflected, f: fr })
            }
        } else if fr < simplex[n - 1].f {
            Some(Vertex { x: trial.clone(), f: fr })
        } else if fr < simplex[n].f {
            let reflected_f = fr;
            point(alpha * rho, &mut trial);
            let fc = counter.eval(&trial);
            (fc <= reflected_f).then(|| Vertex { x: trial.clone(), f: fc })
        } else {
            point(-rho, &mut trial);
            let fc = counter.eval(&trial);
            (fc < simplex[n].f).then(|| Vertex { x: trial.clone(), f: fc })
        };

        match replacement {
            Some(v) => simplex[n] = v,
            None => {
                let best = simplex[0].x.clone();
                for v in simplex.iter_mut().skip(1) {
                    for (xi, b) in v.x.iter_mut().zip(&best) {
                        *xi = b + shrink * (*xi - b);
                    }
                    v.f = counter.eval(&v.x);
                }
            }
        }
        simplex.sort_by(order);
        history.push(simplex[0].f);
        if opts.record_trace {
            trace.push(simplex[0].f);
        }
    }
    let best = simplex.swap_remove(0);
    (best.x, best.f, converged)
}
