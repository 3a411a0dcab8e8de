//! Abstract machine for the small complex product `O = A M` (`A` 3x3, `M`
//! 3xb) with a matrix-tile extension. Every strategy computes real values
//! through modelled vector registers and a two-dimensional accumulator
//! tile, and records each instruction it issues.
//!
//! Counting conventions: structured loads and stores count as one
//! instruction; predicated instructions cost the same as full ones; a partial
//! trailing chunk is executed with a mask.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64 as C64;

use crate::error::{invalid, shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Ld1,
    Ld2,
    St1,
    St2,
    Fmopa,
    Fmla,
    Revd,
    Fneg,
    Mova,
    Zero,
    ScalarFma,
    ScalarLd,
    ScalarSt,
    Mov,
}

impl Opcode {
    pub const ALL: [Opcode; 14] = [
        Opcode::Ld1,
        Opcode::Ld2,
        Opcode::St1,
        Opcode::St2,
        Opcode::Fmopa,
        Opcode::Fmla,
        Opcode::Revd,
        Opcode::Fneg,
        Opcode::Mova,
        Opcode::Zero,
        Opcode::ScalarFma,
        Opcode::ScalarLd,
        Opcode::ScalarSt,
        Opcode::Mov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Ld1 => "LD1",
            Opcode::Ld2 => "LD2",
            Opcode::St1 => "ST1",
            Opcode::St2 => "ST2",
            Opcode::Fmopa => "FMOPA",
            Opcode::Fmla => "FMLA",
            Opcode::Revd => "REVD",
            Opcode::Fneg => "FNEG",
            Opcode::Mova => "MOVA",
            Opcode::Zero => "ZERO",
            Opcode::ScalarFma => "SCALAR_FMA",
            Opcode::ScalarLd => "SCALAR_LD",
            Opcode::ScalarSt => "SCALAR_ST",
            Opcode::Mov => "MOV",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|o| o.name().eq_ignore_ascii_case(s))
    }

    pub fn is_store(self) -> bool {
        matches!(self, Opcode::St1 | Opcode::St2 | Opcode::ScalarSt)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InstructionHistogram {
    counts: [u64; 14],
}

impl InstructionHistogram {
    pub fn count(&self, op: Opcode) -> u64 {
        self.counts[op.index()]
    }

    pub fn record(&mut self, op: Opcode, n: u64) {
        self.counts[op.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Opcode, u64)> + '_ {
        Opcode::ALL.into_iter().map(|o| (o, self.count(o)))
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPreset {
    Uniform,
    Override,
}

/// Cost per opcode; missing entries are an error.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    weights: [Option<f64>; 14],
}

impl CostWeights {
    pub fn uniform() -> Self {
        Self {
            weights: [Some(1.0); 14],
        }
    }

    /// Register moves free, stores and outer products cost two.
    pub fn override_preset() -> Self {
        let mut w = Self::uniform();
        for op in Opcode::ALL {
            if op.is_store() || op == Opcode::Fmopa {
                w.weights[op.index()] = Some(2.0);
            }
        }
        w.weights[Opcode::Mov.index()] = Some(0.0);
        w
    }

    pub fn preset(p: WeightPreset) -> Self {
        match p {
            WeightPreset::Uniform => Self::uniform(),
            WeightPreset::Override => Self::override_preset(),
        }
    }

    /// Weights for the listed opcodes only.
    pub fn from_pairs(pairs: &[(Opcode, f64)]) -> Result<Self> {
        let mut weights = [None; 14];
        for &(op, w) in pairs {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid!("weight for {op} must be non-negative, got {w}"));
            }
            weights[op.index()] = Some(w);
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, op: Opcode) -> Option<f64> {
        self.weights[op.index()]
    }
}

/// `sum count * weight`; an opcode that occurs without a weight is an error.
pub fn cost(trace: &InstructionHistogram, weights: &CostWeights) -> Result<f64> {
    let mut total = 0.0;
    for (op, n) in trace.iter() {
        if n == 0 {
            continue;
        }
        let w = weights
            .weight(op)
            .ok_or_else(|| invalid!("no cost weight for opcode {op}"))?;
        total += n as f64 * w;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    NegA,
    NegM,
    DeinterleaveBoth,
    Scalar,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::NegA, Strategy::NegM, Strategy::DeinterleaveBoth, Strategy::Scalar];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NegA => "neg-a",
            Strategy::NegM => "neg-m",
            Strategy::DeinterleaveBoth => "deinterleave-both",
            Strategy::Scalar => "scalar",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid!("unknown strategy '{s}'"))
    }

    fn uses_tile(self) -> bool {
        matches!(self, Strategy::NegA | Strategy::NegM)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Vector registers of `svl / 64` doubles, one square tile of the same
/// width, and an instruction trace.
#[derive(Debug, Clone)]
pub struct AbstractMachine {
    svl_bits: usize,
    za: Vec<f64>,
    trace: InstructionHistogram,
}

type Vreg = Vec<f64>;

impl AbstractMachine {
    pub fn new(svl_bits: usize) -> Result<Self> {
        if svl_bits < 128 || svl_bits > 2048 || svl_bits % 128 != 0 {
            return Err(invalid!("svl must be a multiple of 128 in [128, 2048], got {svl_bits}"));
        }
        let lanes = svl_bits / 64;
        Ok(Self {
            svl_bits,
            za: vec![0.0; lanes * lanes],
            trace: InstructionHistogram::default(),
        })
    }

    pub fn svl_bits(&self) -> usize {
        self.svl_bits
    }

    /// Doubles per vector register.
    pub fn lanes(&self) -> usize {
        self.svl_bits / 64
    }

    pub fn trace(&self) -> &InstructionHistogram {
        &self.trace
    }

    pub fn reset_trace(&mut self) {
        self.trace = InstructionHistogram::default();
    }

    /// Tile row `p`.
    pub fn za_row(&self, p: usize) -> &[f64] {
        let l = self.lanes();
        &self.za[p * l..][..l]
    }

    fn emit(&mut self, op: Opcode) {
        self.trace.record(op, 1);
    }

    fn ld1(&mut self, src: &[f64]) -> Vreg {
        self.emit(Opcode::Ld1);
        let mut v = vec![0.0; self.lanes()];
        v[..src.len()].copy_from_slice(src);
        v
    }

    /// Structured load splitting complex values into real and imaginary parts.
    fn ld2(&mut self, src: &[C64]) -> (Vreg, Vreg) {
        self.emit(Opcode::Ld2);
        let l = self.lanes();
        let (mut re, mut im) = (vec![0.0; l], vec![0.0; l]);
        for (k, z) in src.iter().enumerate() {
            re[k] = z.re;
            im[k] = z.im;
        }
        (re, im)
    }

    /// Replicating structured load of one complex value.
    fn ld2_broadcast(&mut self, z: C64) -> (Vreg, Vreg) {
        self.emit(Opcode::Ld2);
        let l = self.lanes();
        (vec![z.re; l], vec![z.im; l])
    }

    fn st2(&mut self, re: &[f64], im: &[f64], dst: &mut [C64]) {
        self.emit(Opcode::St2);
        for (k, z) in dst.iter_mut().enumerate() {
            *z = C64::new(re[k], im[k]);
        }
    }

    fn revd(&mut self, v: &[f64]) -> Vreg {
        self.emit(Opcode::Revd);
        let mut out = v.to_vec();
        for pair in out.chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
        out
    }

    /// Negates the even lanes.
    fn fneg_even(&mut self, v: &mut [f64]) {
        self.emit(Opcode::Fneg);
        for x in v.iter_mut().step_by(2) {
            *x = -*x;
        }
    }

    fn zero_za(&mut self) {
        self.emit(Opcode::Zero);
        self.za.fill(0.0);
    }

    /// `za[p][q] += col[p] * row[q]`.
    fn fmopa(&mut self, col: &[f64], row: &[f64]) {
        self.emit(Opcode::Fmopa);
        let l = self.lanes();
        for p in 0..l {
            for q in 0..l {
                self.za[p * l + q] += col[p] * row[q];
            }
        }
    }

    fn mova(&mut self, p: usize) -> Vreg {
        self.emit(Opcode::Mova);
        self.za_row(p).to_vec()
    }

    /// Tile-slice store of row `p`.
    fn st1_za(&mut self, p: usize, dst: &mut [f64]) {
        self.emit(Opcode::St1);
        let n = dst.len();
        let l = self.lanes();
        dst.copy_from_slice(&self.za[p * l..][..n]);
    }

    /// `acc += sign * x * y`.
    fn fmla(&mut self, acc: &mut [f64], x: &[f64], y: &[f64], sign: f64) {
        self.emit(Opcode::Fmla);
        for ((a, p), q) in acc.iter_mut().zip(x).zip(y) {
            *a += sign * p * q;
        }
    }

    fn mov(&mut self, v: &[f64]) -> Vreg {
        self.emit(Opcode::Mov);
        v.to_vec()
    }
}

fn interleave(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// A interleaved per column, swapped-and-negated once; M rows deinterleaved.
fn neg_a(a: &[C64; 9], m: &[C64], b: usize, mach: &mut AbstractMachine) -> Vec<C64> {
    let chunk = mach.lanes();
    let mut o = vec![C64::new(0.0, 0.0); 3 * b];
    let mut cols = Vec::with_capacity(3);
    for k in 0..3 {
        let col: Vec<C64> = (0..3).map(|r| a[r * 3 + k]).collect();
        let v = mach.ld1(&interleave(&col));
        let mut sw = mach.revd(&v);
        mach.fneg_even(&mut sw);
        cols.push((v, sw));
    }
    for j0 in (0..b).step_by(chunk) {
        let n = chunk.min(b - j0);
        mach.zero_za();
        for (k, (v, sw)) in cols.iter().enumerate() {
            let (re, im) = mach.ld2(&m[k * b + j0..][..n]);
            mach.fmopa(v, &re);
            mach.fmopa(sw, &im);
        }
        for r in 0..3 {
            let re = mach.mova(2 * r);
            let im = mach.mova(2 * r + 1);
            mach.st2(&re, &im, &mut o[r * b + j0..][..n]);
        }
    }
    o
}

/// A deinterleaved per column; M rows interleaved and swapped-and-negated
/// per chunk. Tile rows come out interleaved and are stored directly.
fn neg_m(a: &[C64; 9], m: &[C64], b: usize, mach: &mut AbstractMachine) -> Vec<C64> {
    let chunk = mach.lanes() / 2;
    let mut o = vec![C64::new(0.0, 0.0); 3 * b];
    let mut cols = Vec::with_capacity(3);
    for k in 0..3 {
        let col: Vec<C64> = (0..3).map(|r| a[r * 3 + k]).collect();
        cols.push(mach.ld2(&col));
    }
    let mut buf = vec![0.0; 2 * chunk];
    for j0 in (0..b).step_by(chunk) {
        let n = chunk.min(b - j0);
        mach.zero_za();
        for (k, (re, im)) in cols.iter().enumerate() {
            let v = mach.ld1(&interleave(&m[k * b + j0..][..n]));
            let mut sw = mach.revd(&v);
            mach.fneg_even(&mut sw);
            mach.fmopa(re, &v);
            mach.fmopa(im, &sw);
        }
        for r in 0..3 {
            mach.st1_za(r, &mut buf[..2 * n]);
            for j in 0..n {
                o[r * b + j0 + j] = C64::new(buf[2 * j], buf[2 * j + 1]);
            }
        }
    }
    o
}

/// Plain vector code: broadcast A entries, deinterleave M, accumulate O in
/// memory across the inner dimension.
fn deinterleave_both(a: &[C64; 9], m: &[C64], b: usize, mach: &mut AbstractMachine) -> Vec<C64> {
    let chunk = mach.lanes();
    let l = mach.lanes();
    let mut o = vec![C64::new(0.0, 0.0); 3 * b];
    let zero = vec![0.0; l];
    let zero = mach.mov(&zero);
    for r in 0..3 {
        for k in 0..3 {
            let (ar, ai) = mach.ld2_broadcast(a[r * 3 + k]);
            for j0 in (0..b).step_by(chunk) {
                let n = chunk.min(b - j0);
                let (mr, mi) = mach.ld2(&m[k * b + j0..][..n]);
                let (mut or, mut oi) = if k == 0 {
                    (mach.mov(&zero), mach.mov(&zero))
                } else {
                    mach.ld2(&o[r * b + j0..][..n])
                };
                mach.fmla(&mut or, &ar, &mr, 1.0);
                mach.fmla(&mut or, &ai, &mi, -1.0);
                mach.fmla(&mut oi, &ar, &mi, 1.0);
                mach.fmla(&mut oi, &ai, &mr, 1.0);
                mach.st2(&or, &oi, &mut o[r * b + j0..][..n]);
            }
        }
    }
    o
}

/// Scalar triple loop.
fn scalar(a: &[C64; 9], m: &[C64], b: usize, mach: &mut AbstractMachine) -> Vec<C64> {
    let mut o = vec![C64::new(0.0, 0.0); 3 * b];
    for r in 0..3 {
        for j in 0..b {
            mach.trace.record(Opcode::Mov, 2);
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..3 {
                mach.trace.record(Opcode::ScalarLd, 4);
                mach.trace.record(Opcode::ScalarFma, 4);
                let (x, y) = (a[r * 3 + k], m[k * b + j]);
                re += x.re * y.re;
                re -= x.im * y.im;
                im += x.re * y.im;
                im += x.im * y.re;
            }
            mach.trace.record(Opcode::ScalarSt, 2);
            o[r * b + j] = C64::new(re, im);
        }
    }
    o
}

/// Runs one strategy on `A` (row-major 3x3) and `M` (row-major 3xb).
/// The machine's trace is reset first.
pub fn run_kernel(
    strategy: Strategy,
    a: &[C64; 9],
    m: &[C64],
    b: usize,
    mach: &mut AbstractMachine,
) -> Result<(Vec<C64>, InstructionHistogram)> {
    if b == 0 {
        return Err(invalid!("b must be positive"));
    }
    if m.len() != 3 * b {
        return Err(shape!("M has {} entries, expected 3 x {b}", m.len()));
    }
    if strategy.uses_tile() && mach.svl_bits() < 384 {
        return Err(Error::Unsupported(alloc::format!(
            "{strategy} needs svl >= 384 to hold three interleaved complex values, got {}",
            mach.svl_bits()
        )));
    }
    mach.reset_trace();
    let o = match strategy {
        Strategy::NegA => neg_a(a, m, b, mach),
        Strategy::NegM => neg_m(a, m, b, mach),
        Strategy::DeinterleaveBoth => deinterleave_both(a, m, b, mach),
        Strategy::Scalar => scalar(a, m, b, mach),
    };
    Ok((o, *mach.trace()))
}

/// Reference product by the textbook triple loop.
pub fn direct_product(a: &[C64; 9], m: &[C64], b: usize) -> Vec<C64> {
    let mut o = vec![C64::new(0.0, 0.0); 3 * b];
    for r in 0..3 {
        for j in 0..b {
            o[r * b + j] = (0..3).map(|k| a[r * 3 + k] * m[k * b + j]).sum();
        }
    }
    o
}

/// Per-call cost of a strategy at width `b`.
pub fn kernel_cost(strategy: Strategy, b: usize, svl_bits: usize, weights: &CostWeights) -> Result<f64> {
    let mut mach = AbstractMachine::new(svl_bits)?;
    let a = [C64::new(0.0, 0.0); 9];
    let m = vec![C64::new(0.0, 0.0); 3 * b];
    let (_, trace) = run_kernel(strategy, &a, &m, b, &mut mach)?;
    cost(&trace, weights)
}

/// `iterations * (cost(b2) - cost(b1))`: the incremental cost of the extra
/// right-hand sides with fixed overhead cancelled.
pub fn delta_cost(
    strategy: Strategy,
    b1: usize,
    b2: usize,
    iterations: u64,
    svl_bits: usize,
    weights: &CostWeights,
) -> Result<f64> {
    if b1 > b2 {
        return Err(invalid!("delta_cost needs b1 <= b2, got {b1} > {b2}"));
    }
    let c1 = kernel_cost(strategy, b1, svl_bits, weights)?;
    let c2 = kernel_cost(strategy, b2, svl_bits, weights)?;
    Ok(iterations as f64 * (c2 - c1))
}
