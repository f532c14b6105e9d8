#![allow(dead_code)]

use chainmix::SequenceDataset;

/// Count-and-normalize single-chain estimate; rows without observations are uniform.
pub fn counting_mle(data: &SequenceDataset) -> (Vec<f64>, Vec<Vec<f64>>) {
    let c = data.categories().len();
    let mut starts = vec![0.0; c];
    let mut counts = vec![vec![0.0; c]; c];
    for s in data.sequences() {
        let st = s.states();
        starts[st[0]] += 1.0;
        for w in st.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
    }
    let n = data.len() as f64;
    let f = starts.iter().map(|x| x / n).collect();
    let t = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total == 0.0 {
                vec![1.0 / c as f64; c]
            } else {
                row.iter().map(|x| x / total).collect()
            }
        })
        .collect();
    (f, t)
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
