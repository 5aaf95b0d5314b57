use feedback_dmc_core::ivtree::DualTree;
use feedback_dmc_core::rng::SplitMix64;

struct FlatMap { widths: Vec<f64>, masses: Vec<f64> }
impl FlatMap {
    fn new() -> Self { FlatMap { widths: vec![1.0], masses: vec![1.0] } }
    fn query(&self, x: f64) -> f64 {
        if x <= 0.0 { return 0.0 } if x >= 1.0 { return 1.0 }
        let mut w_acc = 0.0; let mut m_acc = 0.0;
        for (w, m) in self.widths.iter().zip(&self.masses) {
            if x < w_acc + w || w_acc + w >= 1.0 {
                let frac = if *w > 0.0 { (x - w_acc) / w } else { 0.0 };
                return (m_acc + m * frac.clamp(0.0, 1.0)).clamp(0.0, 1.0);
            }
            w_acc += w; m_acc += m;
        }
        1.0
    }
    fn scale(&mut self, y: f64, r: f64) {
        let mut rem = y; let mut comp = 0.0f64;
        let mut split_at = self.masses.len();
        for (k, m) in self.masses.iter().enumerate() {
            if rem + comp < *m {
                let frac = ((rem + comp) / m).clamp(0.0, 1.0);
                if frac > 0.0 && frac < 1.0 {
                    let (w, mm) = (self.widths[k], self.masses[k]);
                    self.widths[k] = w * frac; self.masses[k] = mm * frac;
                    self.widths.insert(k + 1, w * (1.0 - frac));
                    self.masses.insert(k + 1, mm * (1.0 - frac));
                    split_at = k + 1;
                } else { split_at = if frac == 0.0 { k } else { k + 1 }; }
                break;
            }
            let d = rem - m; comp += (rem - d) - m; rem = d;
        }
        let lsum: f64 = self.masses[..split_at].iter().sum();
        let rsum: f64 = self.masses[split_at..].iter().sum();
        let left = if lsum > 0.0 { r / lsum } else { 0.0 };
        let right = if rsum > 0.0 { (1.0 - r) / rsum } else { 0.0 };
        for (k, m) in self.masses.iter_mut().enumerate() {
            *m *= if k < split_at { left } else { right };
        }
    }
}

fn main() {
    let mut rng = SplitMix64::new(2024);
    let mut t = DualTree::new(96);
    let mut oracle = FlatMap::new();
    let probes: Vec<f64> = { let mut r = SplitMix64::new(99); (0..64).map(|_| r.next_unit()).collect() };
    for step in 0..10_000 {
        let y = 0.001 + 0.998 * rng.next_unit();
        let r = 0.001 + 0.998 * rng.next_unit();
        t.scale_interval(y, r).unwrap();
        oracle.scale(y, r);
        if step % 500 == 0 {
            let mut worst = 0.0; let mut wx = 0.0;
            for &x in &probes {
                let d = (t.query_msg_point(x) - oracle.query(x)).abs();
                if d > worst { worst = d; wx = x; }
            }
            if step % 2000 == 0 { println!("step {step}: worst probe diff {worst:e} at x={wx}"); }
            if worst > 1e-9 {
                println!("   tree={:.17} oracle={:.17}", t.query_msg_point(wx), oracle.query(wx));
                // also compare segment masses
                let tm = t.leaf_masses_in_order();
                if tm.len() == oracle.masses.len() {
                    let mut wr = 0.0; let mut wk = 0;
                    for (k,(a,b)) in tm.iter().zip(&oracle.masses).enumerate() {
                        let rel = (a-b).abs()/a.max(*b).max(1e-300);
                        if rel > wr { wr = rel; wk = k; }
                    }
                    println!("   worst segment rel {wr:e} at seg {wk}: tree={:e} oracle={:e}", tm[wk], oracle.masses[wk]);
                    // widths too
                    let mut cum = 0.0; let mut wcum = 0.0;
                    for k in 0..=wk { wcum = cum; cum += tm[k]; }
                    println!("   tree cum at that segment: {wcum:.17}..{cum:.17}");
                } else { println!("   seg counts differ {} vs {}", tm.len(), oracle.masses.len()); }
                break;
            }
        }
    }
}
