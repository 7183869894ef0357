//! Operator norms between the exotic norm pairs used by the recovery
//! conditions, exact where the documented enumeration bound allows and a
//! multi-start ascent lower bound otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::rng::{rng_from_seed, Dist};

use super::Method;

/// Budget for exact extreme-point enumeration.
pub const EXACT_ENUM_BUDGET: usize = 1_000_000;

/// Norms on the spaces a condition map can touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormTag {
    /// ‖·‖₁ = max column l1 (matrix spaces).
    ColMaxL1,
    /// ‖·‖₁* = sum of column max norms (matrix spaces).
    ColSumLinf,
    /// Entrywise max norm.
    MaxAbs,
    /// Frobenius norm.
    Fro,
    /// Euclidean norm on measurement vectors.
    L2,
}

impl NormTag {
    pub fn tag(self) -> &'static str {
        match self {
            NormTag::ColMaxL1 => "colmax_l1",
            NormTag::ColSumLinf => "colsum_linf",
            NormTag::MaxAbs => "max_abs",
            NormTag::Fro => "fro",
            NormTag::L2 => "l2",
        }
    }

    /// Dual norm within the menu, when it is representable.
    pub fn dual(self) -> Option<NormTag> {
        match self {
            NormTag::ColMaxL1 => Some(NormTag::ColSumLinf),
            NormTag::ColSumLinf => Some(NormTag::ColMaxL1),
            NormTag::Fro => Some(NormTag::Fro),
            NormTag::L2 => Some(NormTag::L2),
            NormTag::MaxAbs => None,
        }
    }
}

/// Shape of a map's domain or codomain: a vectorized n-by-n matrix space
/// or a plain measurement vector space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceShape {
    Matrix { n: usize },
    Vector { len: usize },
}

impl SpaceShape {
    pub fn dim(self) -> usize {
        match self {
            SpaceShape::Matrix { n } => n * n,
            SpaceShape::Vector { len } => len,
        }
    }

    fn supports(self, tag: NormTag) -> bool {
        match self {
            SpaceShape::Matrix { .. } => !matches!(tag, NormTag::L2),
            SpaceShape::Vector { .. } => matches!(tag, NormTag::L2 | NormTag::Fro | NormTag::MaxAbs),
        }
    }
}

/// Dense matrix representation of a linear map between the two spaces.
#[derive(Debug, Clone)]
pub struct MatLinearMap {
    pub mat: DMatrix<f64>,
    pub input: SpaceShape,
    pub output: SpaceShape,
}

impl MatLinearMap {
    pub fn new(mat: DMatrix<f64>, input: SpaceShape, output: SpaceShape) -> Result<Self> {
        if mat.ncols() != input.dim() || mat.nrows() != output.dim() {
            return Err(CoreError::Dimension(format!(
                "map is {}x{}, spaces expect {}x{}",
                mat.nrows(),
                mat.ncols(),
                output.dim(),
                input.dim()
            )));
        }
        Ok(Self { mat, input, output })
    }

    pub fn identity(space: SpaceShape) -> Self {
        Self {
            mat: DMatrix::identity(space.dim(), space.dim()),
            input: space,
            output: space,
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            mat: self.mat.transpose(),
            input: self.output,
            output: self.input,
        }
    }
}

/// Norm of a vectorized element of the given space.
pub fn norm_in_space(shape: SpaceShape, tag: NormTag, v: &DVector<f64>) -> f64 {
    match shape {
        SpaceShape::Vector { .. } => match tag {
            NormTag::L2 | NormTag::Fro => v.norm(),
            NormTag::MaxAbs => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
            _ => f64::NAN,
        },
        SpaceShape::Matrix { n } => match tag {
            NormTag::ColMaxL1 => (0..n)
                .map(|j| (0..n).map(|i| v[j * n + i].abs()).sum::<f64>())
                .fold(0.0, f64::max),
            NormTag::ColSumLinf => (0..n)
                .map(|j| (0..n).map(|i| v[j * n + i].abs()).fold(0.0, f64::max))
                .sum(),
            NormTag::MaxAbs => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
            NormTag::Fro => v.norm(),
            NormTag::L2 => f64::NAN,
        },
    }
}

/// A unit-ball element achieving sup ⟨v, u⟩ over the `tag` ball.
fn dual_achiever(shape: SpaceShape, tag: NormTag, v: &DVector<f64>) -> DVector<f64> {
    let dim = shape.dim();
    let mut u = DVector::zeros(dim);
    match (shape, tag) {
        (_, NormTag::L2) | (_, NormTag::Fro) => {
            let n = v.norm();
            if n > 0.0 {
                u = v / n;
            }
        }
        (SpaceShape::Matrix { n }, NormTag::ColMaxL1) => {
            // Product of column l1 balls: per-column signed peak.
            for j in 0..n {
                let mut best = 0usize;
                let mut best_val = -1.0;
                for i in 0..n {
                    let a = v[j * n + i].abs();
                    if a > best_val {
                        best_val = a;
                        best = i;
                    }
                }
                if best_val > 0.0 {
                    u[j * n + best] = v[j * n + best].signum();
                }
            }
        }
        (SpaceShape::Matrix { n }, NormTag::ColSumLinf) => {
            // Budget concentrates on the column with the largest l1 mass.
            let mut best_j = 0usize;
            let mut best_mass = -1.0;
            for j in 0..n {
                let mass: f64 = (0..n).map(|i| v[j * n + i].abs()).sum();
                if mass > best_mass {
                    best_mass = mass;
                    best_j = j;
                }
            }
            for i in 0..n {
                let x = v[best_j * n + i];
                if x != 0.0 {
                    u[best_j * n + i] = x.signum();
                }
            }
        }
        _ => {}
    }
    u
}

fn subgradient_of_norm(shape: SpaceShape, tag: NormTag, v: &DVector<f64>) -> DVector<f64> {
    // Any maximizing functional of the norm works as an ascent direction.
    dual_achiever_for_subgrad(shape, tag, v)
}

fn dual_achiever_for_subgrad(shape: SpaceShape, tag: NormTag, v: &DVector<f64>) -> DVector<f64> {
    let dim = shape.dim();
    let mut g = DVector::zeros(dim);
    match (shape, tag) {
        (_, NormTag::L2) | (_, NormTag::Fro) => {
            let n = v.norm();
            if n > 0.0 {
                g = v / n;
            }
        }
        (_, NormTag::MaxAbs) => {
            let mut best = 0usize;
            let mut best_val = -1.0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > best_val {
                    best_val = x.abs();
                    best = i;
                }
            }
            if best_val > 0.0 {
                g[best] = v[best].signum();
            }
        }
        (SpaceShape::Matrix { n }, NormTag::ColMaxL1) => {
            let mut best_j = 0usize;
            let mut best_mass = -1.0;
            for j in 0..n {
                let mass: f64 = (0..n).map(|i| v[j * n + i].abs()).sum();
                if mass > best_mass {
                    best_mass = mass;
                    best_j = j;
                }
            }
            for i in 0..n {
                let x = v[best_j * n + i];
                if x != 0.0 {
                    g[best_j * n + i] = x.signum();
                }
            }
        }
        (SpaceShape::Matrix { n }, NormTag::ColSumLinf) => {
            for j in 0..n {
                let mut best = 0usize;
                let mut best_val = -1.0;
                for i in 0..n {
                    let a = v[j * n + i].abs();
                    if a > best_val {
                        best_val = a;
                        best = i;
                    }
                }
                if best_val > 0.0 {
                    g[j * n + best] = v[j * n + best].signum();
                }
            }
        }
        _ => {}
    }
    g
}

/// Computation mode: exact enumeration (guarded), sampled ascent, or
/// exact-with-fallback.
#[derive(Debug, Clone, Copy)]
pub enum OpnormMode {
    Exact,
    Sampled { starts: usize, iters: usize, seed: u64 },
    Auto,
}

#[derive(Debug, Clone)]
pub struct OpnormResult {
    pub value: f64,
    pub method: Method,
    /// Domain element with unit `from` norm achieving (or witnessing a
    /// lower bound of) the reported value.
    pub witness: DVector<f64>,
}

fn validate(map: &MatLinearMap, from: NormTag, to: NormTag) -> Result<()> {
    if !map.input.supports(from) {
        return Err(CoreError::Parameter(format!(
            "norm {} is not defined on the map's domain",
            from.tag()
        )));
    }
    if !map.output.supports(to) {
        return Err(CoreError::Parameter(format!(
            "norm {} is not defined on the map's codomain",
            to.tag()
        )));
    }
    Ok(())
}

/// N(T: from -> to) = sup { |T u|_to : |u|_from <= 1 }.
pub fn opnorm_exotic(
    map: &MatLinearMap,
    from: NormTag,
    to: NormTag,
    mode: OpnormMode,
) -> Result<OpnormResult> {
    validate(map, from, to)?;
    match mode {
        OpnormMode::Exact => exact_opnorm(map, from, to),
        OpnormMode::Sampled { starts, iters, seed } => {
            Ok(sampled_opnorm(map, from, to, starts, iters, seed))
        }
        OpnormMode::Auto => exact_opnorm(map, from, to).or_else(|_| {
            Ok(sampled_opnorm(map, from, to, 64, 300, 0x0411))
        }),
    }
}

fn exact_opnorm(map: &MatLinearMap, from: NormTag, to: NormTag) -> Result<OpnormResult> {
    // Spectral case first.
    if matches!(from, NormTag::L2 | NormTag::Fro) && matches!(to, NormTag::L2 | NormTag::Fro) {
        let svd = map.mat.clone().svd(true, true);
        let (mut best_i, mut best) = (0usize, 0.0f64);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > best {
                best = *s;
                best_i = i;
            }
        }
        let v_t = svd.v_t.as_ref().expect("requested");
        let witness = v_t.row(best_i).transpose();
        return Ok(OpnormResult {
            value: best,
            method: Method::ExactEnumeration,
            witness,
        });
    }

    // Target-side functional enumeration: N = max_w |T^T w|_{from*} with w
    // ranging over the extreme points of the dual ball of `to`.
    let from_dual = from.dual();
    if let Some(fd) = from_dual {
        match (map.output, to) {
            (out_shape, NormTag::MaxAbs) => {
                let rows = map.mat.nrows();
                let mut best = (0.0f64, 0usize);
                for r in 0..rows {
                    let v = map.mat.row(r).transpose();
                    let val = norm_in_space(map.input, fd, &v);
                    if val > best.0 {
                        best = (val, r);
                    }
                }
                let v = map.mat.row(best.1).transpose();
                let witness = dual_achiever(map.input, from, &v);
                let _ = out_shape;
                return Ok(OpnormResult {
                    value: best.0,
                    method: Method::ExactEnumeration,
                    witness,
                });
            }
            (SpaceShape::Matrix { n }, NormTag::ColMaxL1) => {
                let count = n
                    .checked_shl(n as u32)
                    .filter(|&c| c <= EXACT_ENUM_BUDGET)
                    .ok_or_else(|| enum_guard(n))?;
                let _ = count;
                let mut best_val = 0.0f64;
                let mut best_w: Option<DVector<f64>> = None;
                let mut w = DVector::zeros(map.mat.nrows());
                for j in 0..n {
                    for bits in 0u64..(1u64 << n) {
                        w.fill(0.0);
                        for i in 0..n {
                            w[j * n + i] = if bits & (1 << i) != 0 { 1.0 } else { -1.0 };
                        }
                        let v = map.mat.transpose() * &w;
                        let val = norm_in_space(map.input, fd, &v);
                        if val > best_val {
                            best_val = val;
                            best_w = Some(w.clone());
                        }
                    }
                }
                let witness = match best_w {
                    Some(w) => {
                        let v = map.mat.transpose() * w;
                        dual_achiever(map.input, from, &v)
                    }
                    None => DVector::zeros(map.input.dim()),
                };
                return Ok(OpnormResult {
                    value: best_val,
                    method: Method::ExactEnumeration,
                    witness,
                });
            }
            _ => {}
        }
    }

    // Domain-side vertex enumeration.
    match (map.input, from) {
        (SpaceShape::Matrix { n }, NormTag::ColSumLinf) => {
            if n * (1usize << n) > EXACT_ENUM_BUDGET {
                return Err(enum_guard(n));
            }
            let mut best_val = 0.0f64;
            let mut best_u = DVector::zeros(map.input.dim());
            let mut u = DVector::zeros(map.input.dim());
            for j in 0..n {
                for bits in 0u64..(1u64 << n) {
                    u.fill(0.0);
                    for i in 0..n {
                        u[j * n + i] = if bits & (1 << i) != 0 { 1.0 } else { -1.0 };
                    }
                    let val = norm_in_space(map.output, to, &(&map.mat * &u));
                    if val > best_val {
                        best_val = val;
                        best_u = u.clone();
                    }
                }
            }
            return Ok(OpnormResult {
                value: best_val,
                method: Method::ExactEnumeration,
                witness: best_u,
            });
        }
        (SpaceShape::Matrix { n }, NormTag::ColMaxL1) => {
            // One signed basis vector per column: (2n)^n combinations.
            let combos = (2.0 * n as f64).powi(n as i32);
            if combos > EXACT_ENUM_BUDGET as f64 {
                return Err(enum_guard(n));
            }
            let mut best_val = 0.0f64;
            let mut best_u = DVector::zeros(map.input.dim());
            let mut counter = vec![0usize; n];
            let mut u = DVector::zeros(map.input.dim());
            loop {
                u.fill(0.0);
                for (j, &c) in counter.iter().enumerate() {
                    let i = c / 2;
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    u[j * n + i] = sign;
                }
                let val = norm_in_space(map.output, to, &(&map.mat * &u));
                if val > best_val {
                    best_val = val;
                    best_u = u.clone();
                }
                let mut j = 0;
                loop {
                    if j == n {
                        return Ok(OpnormResult {
                            value: best_val,
                            method: Method::ExactEnumeration,
                            witness: best_u,
                        });
                    }
                    counter[j] += 1;
                    if counter[j] < 2 * n {
                        break;
                    }
                    counter[j] = 0;
                    j += 1;
                }
            }
        }
        (_, NormTag::L2) | (_, NormTag::Fro) => {
            // to = ColSumLinf over the l2 sphere: selection enumeration,
            // one signed peak per output column.
            if let (SpaceShape::Matrix { n }, NormTag::ColSumLinf) = (map.output, to) {
                let combos = (2.0 * n as f64).powi(n as i32);
                if combos > EXACT_ENUM_BUDGET as f64 {
                    return Err(enum_guard(n));
                }
                let mut best_val = 0.0f64;
                let mut best_u = DVector::zeros(map.input.dim());
                let mut counter = vec![0usize; n];
                let mut w = DVector::zeros(map.mat.nrows());
                loop {
                    w.fill(0.0);
                    for (j, &c) in counter.iter().enumerate() {
                        let i = c / 2;
                        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                        w[j * n + i] = sign;
                    }
                    let v = map.mat.transpose() * &w;
                    let val = v.norm();
                    if val > best_val {
                        best_val = val;
                        best_u = v / val;
                    }
                    let mut j = 0;
                    loop {
                        if j == n {
                            return Ok(OpnormResult {
                                value: best_val,
                                method: Method::ExactEnumeration,
                                witness: best_u,
                            });
                        }
                        counter[j] += 1;
                        if counter[j] < 2 * n {
                            break;
                        }
                        counter[j] = 0;
                        j += 1;
                    }
                }
            }
        }
        _ => {}
    }

    Err(CoreError::Parameter(format!(
        "unsupported norm pair {} -> {} for exact mode",
        from.tag(),
        to.tag()
    )))
}

fn enum_guard(n: usize) -> CoreError {
    CoreError::SizeGuard(format!(
        "extreme-point enumeration exceeds {EXACT_ENUM_BUDGET} for n = {n}"
    ))
}

fn sampled_opnorm(
    map: &MatLinearMap,
    from: NormTag,
    to: NormTag,
    starts: usize,
    iters: usize,
    seed: u64,
) -> OpnormResult {
    // Monotone alternating maximization of <s, T u>: a maximizing
    // functional s of the target norm at T u, then the from-ball element
    // maximizing <T^T s, u>. Each sweep cannot decrease |T u|_to.
    let dim = map.input.dim();
    let mut rng = rng_from_seed(seed);
    let mut best_val = 0.0f64;
    let mut best_u = DVector::zeros(dim);
    for _ in 0..starts.max(1) {
        let g0 = DVector::from_fn(dim, |_, _| Dist::Gaussian.sample(&mut rng));
        let mut u = dual_achiever(map.input, from, &g0);
        if norm_in_space(map.input, from, &u) == 0.0 {
            continue;
        }
        let mut val = norm_in_space(map.output, to, &(&map.mat * &u));
        for _ in 0..iters.max(1) {
            let tu = &map.mat * &u;
            let s = subgradient_of_norm(map.output, to, &tu);
            let pulled = map.mat.transpose() * s;
            let cand = dual_achiever(map.input, from, &pulled);
            if norm_in_space(map.input, from, &cand) == 0.0 {
                break;
            }
            let val_cand = norm_in_space(map.output, to, &(&map.mat * &cand));
            if val_cand <= val + 1e-15 * val.max(1.0) {
                break;
            }
            u = cand;
            val = val_cand;
        }
        if val > best_val {
            best_val = val;
            best_u = u;
        }
    }
    OpnormResult {
        value: best_val,
        method: Method::SampledLowerBound,
        witness: best_u,
    }
}
