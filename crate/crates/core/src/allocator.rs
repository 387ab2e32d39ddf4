//! Per-image model selection under a global rate budget (multiple-choice
//! knapsack), solved by dynamic programming with an exhaustive oracle.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Quality is compared in fixed point so sums are exact and ties are real ties.
const QUALITY_SCALE: f64 = (1u64 << 40) as f64;
pub const DEFAULT_GRANULARITY_BITS: u64 = 1024;
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;
const DP_CELL_LIMIT: u128 = 400_000_000;

/// Table 1 corpus averages: `(λ, MS-SSIM, bpp)`.
pub const TABLE1: [(f64, f64, f64); 4] = [
    (4.5, 0.9716, 0.1254),
    (6.0, 0.9755, 0.1487),
    (10.0, 0.9813, 0.1999),
    (14.0, 0.9845, 0.2424),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub ms_ssim: f64,
    pub rate_bits: u64,
    pub bpp: f64,
}

impl RdPoint {
    pub fn from_bpp(lambda: f64, ms_ssim: f64, bpp: f64, pixels: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ms_ssim) {
            return Err(Error::invalid(format!("ms_ssim {ms_ssim} outside [0, 1]")));
        }
        if !bpp.is_finite() || bpp < 0.0 || !lambda.is_finite() {
            return Err(Error::invalid(format!("bad rate point lambda={lambda} bpp={bpp}")));
        }
        Ok(RdPoint {
            lambda,
            ms_ssim,
            rate_bits: (bpp * pixels as f64).round() as u64,
            bpp,
        })
    }

    fn quality(&self) -> i64 {
        (self.ms_ssim * QUALITY_SCALE).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOptions {
    pub id: String,
    pub pixels: u64,
    /// Sorted by ascending λ.
    pub options: Vec<RdPoint>,
}

impl ImageOptions {
    pub fn new(id: impl Into<String>, pixels: u64, mut options: Vec<RdPoint>) -> Result<Self> {
        let id = id.into();
        if options.is_empty() {
            return Err(Error::invalid(format!("image {id} has no options")));
        }
        if pixels == 0 {
            return Err(Error::invalid(format!("image {id} has no pixels")));
        }
        if options.len() >= u16::MAX as usize {
            return Err(Error::ResourceLimit(format!("image {id} has {} options", options.len())));
        }
        options.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        Ok(ImageOptions { id, pixels, options })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub images: Vec<ImageOptions>,
    pub budget_bpp: f64,
    pub total_pixels: u64,
}

impl AllocationProblem {
    pub fn new(images: Vec<ImageOptions>, budget_bpp: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("allocation problem without images"));
        }
        if !budget_bpp.is_finite() || budget_bpp < 0.0 {
            return Err(Error::invalid(format!("bad budget {budget_bpp} bpp")));
        }
        let total_pixels = images.iter().map(|i| i.pixels).sum();
        Ok(AllocationProblem {
            images,
            budget_bpp,
            total_pixels,
        })
    }

    pub fn budget_bits(&self) -> u64 {
        (self.budget_bpp * self.total_pixels as f64).floor() as u64
    }

    pub fn with_budget(&self, budget_bpp: f64) -> Result<Self> {
        AllocationProblem::new(self.images.clone(), budget_bpp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Option index per image (into the λ-sorted list).
    pub choices: Vec<usize>,
    /// `(image id, λ)` per image.
    pub assignment: Vec<(String, f64)>,
    pub objective: f64,
    pub total_bits: u64,
    pub budget_bits: u64,
    pub feasible: bool,
}

impl Allocation {
    fn from_choices(problem: &AllocationProblem, choices: Vec<usize>) -> Self {
        let mut objective = Neumaier::default();
        let mut total_bits = 0u64;
        let mut assignment = Vec::with_capacity(choices.len());
        for (img, &o) in problem.images.iter().zip(&choices) {
            let p = &img.options[o];
            objective.add(p.ms_ssim);
            total_bits += p.rate_bits;
            assignment.push((img.id.clone(), p.lambda));
        }
        let budget_bits = problem.budget_bits();
        Allocation {
            choices,
            assignment,
            objective: objective.sum(),
            total_bits,
            budget_bits,
            feasible: total_bits <= budget_bits,
        }
    }
}

/// Compensated summation.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Cheapest option per image, lower λ on equal rate.
fn min_rate_choices(problem: &AllocationProblem) -> Vec<usize> {
    problem
        .images
        .iter()
        .map(|img| {
            (0..img.options.len())
                .min_by_key(|&o| img.options[o].rate_bits)
                .unwrap_or(0)
        })
        .collect()
}

/// `(quality, bits)`: more quality first, then fewer bits.
#[inline]
fn better(a: (i64, u64), b: (i64, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// DP over a budget of `floor(budget_bits / g)` cells with item costs
/// rounded up to whole cells, so any solution is feasible in exact bits.
///
/// Ties on quality go to fewer bits, then to the lexicographically smallest
/// option vector (earlier images take the lower λ first).
pub fn allocate_dp(problem: &AllocationProblem, granularity_bits: u64) -> Result<Allocation> {
    if problem.images.is_empty() {
        return Err(Error::invalid("allocation problem without images"));
    }
    if granularity_bits == 0 {
        return Err(Error::invalid("granularity must be at least one bit"));
    }
    let n = problem.images.len();
    let cap = (problem.budget_bits() / granularity_bits) as usize;
    if (n as u128) * (cap as u128 + 1) > DP_CELL_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "DP table of {n} x {} cells; raise the granularity",
            cap + 1
        )));
    }
    let cells = |bits: u64| bits.div_ceil(granularity_bits) as usize;

    // best[i][c]: optimum over images i.. with c cells left; None if no
    // assignment fits
    const NONE: (i64, u64) = (i64::MIN, u64::MAX);
    let width = cap + 1;
    let mut value = vec![NONE; (n + 1) * width];
    let mut choice = vec![u16::MAX; n * width];
    for c in 0..width {
        value[n * width + c] = (0, 0);
    }
    for i in (0..n).rev() {
        let opts = &problem.images[i].options;
        for c in 0..width {
            let mut best = NONE;
            let mut pick = u16::MAX;
            for (o, p) in opts.iter().enumerate() {
                let need = cells(p.rate_bits);
                if need > c {
                    continue;
                }
                let rest = value[(i + 1) * width + c - need];
                if rest == NONE {
                    continue;
                }
                let cand = (rest.0 + p.quality(), rest.1 + p.rate_bits);
                // options are visited in λ order, so strict improvement keeps
                // the lowest index on a full tie
                if better(cand, best) {
                    best = cand;
                    pick = o as u16;
                }
            }
            value[i * width + c] = best;
            choice[i * width + c] = pick;
        }
    }
    if value[cap] == NONE {
        return Ok(Allocation::from_choices(problem, min_rate_choices(problem)));
    }
    let mut choices = Vec::with_capacity(n);
    let mut c = cap;
    for i in 0..n {
        let o = choice[i * width + c] as usize;
        choices.push(o);
        c -= cells(problem.images[i].options[o].rate_bits);
    }
    Ok(Allocation::from_choices(problem, choices))
}

/// Exhaustive search in lexicographic order with the same tie-break.
pub fn allocate_bruteforce(problem: &AllocationProblem) -> Result<Allocation> {
    if problem.images.is_empty() {
        return Err(Error::invalid("allocation problem without images"));
    }
    let count = problem
        .images
        .iter()
        .try_fold(1u128, |acc, img| acc.checked_mul(img.options.len() as u128))
        .unwrap_or(u128::MAX);
    if count > BRUTEFORCE_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "{count} assignments exceeds the enumeration limit of {BRUTEFORCE_LIMIT}"
        )));
    }
    let budget = problem.budget_bits();
    let n = problem.images.len();
    let mut cur = vec![0usize; n];
    let mut best: Option<((i64, u64), Vec<usize>)> = None;
    loop {
        let (mut q, mut bits) = (0i64, 0u64);
        for (img, &o) in problem.images.iter().zip(&cur) {
            q += img.options[o].quality();
            bits += img.options[o].rate_bits;
        }
        if bits <= budget && best.as_ref().is_none_or(|(b, _)| better((q, bits), *b)) {
            best = Some(((q, bits), cur.clone()));
        }
        // odometer increment, last image fastest
        let mut i = n;
        loop {
            if i == 0 {
                let choices = best.map(|(_, c)| c).unwrap_or_else(|| min_rate_choices(problem));
                return Ok(Allocation::from_choices(problem, choices));
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < problem.images[i].options.len() {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// Best assignment that uses one option index for every image.
pub fn best_uniform(problem: &AllocationProblem) -> Option<Allocation> {
    let m = problem.images.iter().map(|i| i.options.len()).min()?;
    (0..m)
        .map(|o| Allocation::from_choices(problem, vec![o; problem.images.len()]))
        .filter(|a| a.feasible)
        .max_by(|a, b| a.objective.total_cmp(&b.objective))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_ms_ssim: f64,
    pub bpp: f64,
}

/// Mean chosen quality and aggregate bpp. The mean is taken around the first
/// value with compensated summation of the deviations.
pub fn summarize(allocation: &Allocation, problem: &AllocationProblem) -> Summary {
    let chosen: Vec<f64> = problem
        .images
        .iter()
        .zip(&allocation.choices)
        .map(|(img, &o)| img.options[o].ms_ssim)
        .collect();
    let pivot = chosen.first().copied().unwrap_or(0.0);
    let mut dev = Neumaier::default();
    for v in &chosen {
        dev.add(v - pivot);
    }
    Summary {
        mean_ms_ssim: pivot + dev.sum() / chosen.len().max(1) as f64,
        bpp: allocation.total_bits as f64 / problem.total_pixels as f64,
    }
}

/// Uniform corpus in which every image carries the Table 1 averages.
///
/// With `spread`, images come in pairs whose qualities and rates deviate by
/// equal and opposite integer amounts, leaving every per-λ corpus mean exact.
pub fn table1_corpus(images: usize, pixels: u64, spread: Option<u64>) -> Result<Vec<ImageOptions>> {
    use rand::{Rng, SeedableRng};
    let mut rng = spread.map(rand_chacha::ChaCha8Rng::seed_from_u64);
    let mut out = Vec::with_capacity(images);
    let mut pending: Option<Vec<(i64, i64)>> = None;
    for i in 0..images {
        let deltas: Vec<(i64, i64)> = match (&mut rng, pending.take()) {
            (Some(_), Some(prev)) if i % 2 == 1 => prev.iter().map(|&(q, b)| (-q, -b)).collect(),
            (Some(r), _) if i + 1 < images => {
                // quality in units of 1e-4, rate in bits per 10^4 pixels
                let d: Vec<(i64, i64)> = (0..TABLE1.len())
                    .map(|_| (r.random_range(-30..=30), r.random_range(-150..=150)))
                    .collect();
                pending = Some(d.clone());
                d
            }
            _ => vec![(0, 0); TABLE1.len()],
        };
        let options = TABLE1
            .iter()
            .zip(&deltas)
            .map(|(&(lambda, q, bpp), &(dq, db))| {
                let rate = (bpp * pixels as f64).round() as i64 + db * pixels as i64 / 10_000;
                let ms = q + dq as f64 * 1e-4;
                RdPoint::from_bpp(lambda, ms, rate as f64 / pixels as f64, pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ImageOptions::new(format!("img{i:03}"), pixels, options)?);
    }
    Ok(out)
}

/// Reads `image_id,pixels,lambda,bpp,ms_ssim` rows; images keep their first
/// appearance order.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ImageOptions>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let want = ["image_id", "pixels", "lambda", "bpp", "ms_ssim"];
    if header.iter().collect::<Vec<_>>() != want {
        return Err(Error::invalid(format!("CSV header must be {}", want.join(","))));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (u64, Vec<RdPoint>)> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::invalid(format!("CSV row {}: bad {what}", line + 2));
        let id = rec[0].to_string();
        let pixels: u64 = rec[1].parse().map_err(|_| bad("pixels"))?;
        let lambda: f64 = rec[2].parse().map_err(|_| bad("lambda"))?;
        let bpp: f64 = rec[3].parse().map_err(|_| bad("bpp"))?;
        let ms: f64 = rec[4].parse().map_err(|_| bad("ms_ssim"))?;
        let point = RdPoint::from_bpp(lambda, ms, bpp, pixels)?;
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (pixels, Vec::new())
        });
        if entry.0 != pixels {
            return Err(bad("pixels (differs from an earlier row of the same image)"));
        }
        entry.1.push(point);
    }
    order
        .into_iter()
        .map(|id| {
            let (pixels, pts) = groups.remove(&id).unwrap_or_default();
            ImageOptions::new(id, pixels, pts)
        })
        .collect()
}

pub fn write_csv<W: Write>(writer: W, images: &[ImageOptions]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "pixels", "lambda", "bpp", "ms_ssim"]).map_err(csv_err)?;
    for img in images {
        for p in &img.options {
            w.write_record([
                img.id.clone(),
                img.pixels.to_string(),
                p.lambda.to_string(),
                p.bpp.to_string(),
                p.ms_ssim.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `image_id,lambda` rows followed by one `# summary` line.
pub fn write_allocation<W: Write>(mut writer: W, allocation: &Allocation, summary: &Summary) -> Result<()> {
    writeln!(writer, "image_id,lambda")?;
    for (id, lambda) in &allocation.assignment {
        writeln!(writer, "{id},{lambda}")?;
    }
    writeln!(
        writer,
        "# mean_ms_ssim={:.6} bpp={:.6} total_bits={} budget_bits={} feasible={}",
        summary.mean_ms_ssim, summary.bpp, allocation.total_bits, allocation.budget_bits, allocation.feasible
    )?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(id: &str, pts: &[(f64, f64, u64)]) -> ImageOptions {
        let opts = pts
            .iter()
            .map(|&(l, q, bits)| RdPoint {
                lambda: l,
                ms_ssim: q,
                rate_bits: bits,
                bpp: bits as f64 / 100.0,
            })
            .collect();
        ImageOptions::new(id, 100, opts).unwrap()
    }

    #[test]
    fn single_image_takes_best_quality() {
        let p = AllocationProblem::new(vec![image("a", &[(1.0, 0.9, 10), (2.0, 0.95, 20), (3.0, 0.97, 30)])], 1.0)
            .unwrap();
        let a = allocate_dp(&p, 1).unwrap();
        assert_eq!(a.choices, vec![2]);
        assert!(a.feasible);
    }

    #[test]
    fn exact_minimum_budget_forces_lowest_lambda() {
        let imgs = vec![
            image("a", &[(1.0, 0.90, 10), (2.0, 0.95, 20)]),
            image("b", &[(1.0, 0.80, 15), (2.0, 0.99, 40)]),
        ];
        let p = AllocationProblem::new(imgs, 25.0 / 200.0).unwrap();
        assert_eq!(p.budget_bits(), 25);
        assert_eq!(allocate_dp(&p, 1).unwrap().choices, vec![0, 0]);
    }

    #[test]
    fn infeasible_returns_min_rate() {
        let imgs = vec![image("a", &[(1.0, 0.9, 50), (2.0, 0.95, 20)])];
        let p = AllocationProblem::new(imgs, 0.1).unwrap();
        for a in [allocate_dp(&p, 1).unwrap(), allocate_bruteforce(&p).unwrap()] {
            assert!(!a.feasible);
            assert_eq!(a.choices, vec![1]);
        }
    }

    #[test]
    fn ties_prefer_fewer_bits_then_low_lambda_on_early_images() {
        // equal quality, different bits
        let p = AllocationProblem::new(vec![image("a", &[(1.0, 0.9, 30), (2.0, 0.9, 20)])], 1.0).unwrap();
        assert_eq!(allocate_dp(&p, 1).unwrap().choices, vec![1]);
        // two symmetric optima: the first image gets the lower λ
        let imgs = vec![
            image("a", &[(1.0, 0.5, 10), (2.0, 0.75, 20)]),
            image("b", &[(1.0, 0.5, 10), (2.0, 0.75, 20)]),
        ];
        let p = AllocationProblem::new(imgs, 0.15).unwrap();
        assert_eq!(allocate_dp(&p, 1).unwrap().choices, vec![0, 1]);
        assert_eq!(allocate_bruteforce(&p).unwrap().choices, vec![0, 1]);
    }

    #[test]
    fn coarse_cells_stay_feasible() {
        let imgs = vec![image("a", &[(1.0, 0.5, 5), (2.0, 0.6, 6)])];
        let p = AllocationProblem::new(imgs, 0.05).unwrap();
        let a = allocate_dp(&p, 4).unwrap();
        assert!(a.total_bits <= 5);
    }

    #[test]
    fn bruteforce_limit() {
        let imgs: Vec<_> = (0..12).map(|i| image(&format!("i{i}"), &[(1.0, 0.5, 1), (2.0, 0.6, 2), (3.0, 0.7, 3), (4.0, 0.8, 4)])).collect();
        let p = AllocationProblem::new(imgs, 1.0).unwrap();
        assert!(matches!(allocate_bruteforce(&p), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn empty_problem_is_rejected() {
        assert!(AllocationProblem::new(vec![], 0.1).is_err());
        assert!(allocate_dp(
            &AllocationProblem {
                images: vec![],
                budget_bpp: 0.1,
                total_pixels: 0
            },
            1
        )
        .is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let imgs = table1_corpus(3, 10_000, Some(1)).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &imgs).unwrap();
        assert!(buf.starts_with(b"image_id,pixels,lambda,bpp,ms_ssim\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), imgs);
        assert!(read_csv(&b"id,pixels\nx,1\n"[..]).is_err());
    }
}
