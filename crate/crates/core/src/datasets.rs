//! Small synthetic tables used by the test suites and the bundled examples.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataio::{Column, RawColumn, RawTable, Schema, Task};
use crate::numerics::rng;

/// Two bivariate Gaussian clusters with a cluster label (the target) and a
/// categorical column whose distribution depends on the cluster.
pub fn gaussian_mixture(n: usize, seed: u64) -> RawTable {
    let mut r = rng(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut shade = Vec::with_capacity(n);
    let mut cluster = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.random_bool(0.4) as usize;
        let (mx, my, sx, sy, rho) = if k == 0 {
            (-2.0, -1.0, 1.0, 0.6, 0.5)
        } else {
            (2.5, 1.5, 0.7, 1.2, -0.3)
        };
        let a: f64 = unit.sample(&mut r);
        let b: f64 = unit.sample(&mut r);
        x.push(Some(mx + sx * a));
        y.push(Some(my + sy * (rho * a + (1.0f64 - rho * rho).sqrt() * b)));
        let p_red = if k == 0 { 0.7 } else { 0.2 };
        let u: f64 = r.random();
        let s = if u < p_red {
            "red"
        } else if u < p_red + (1.0 - p_red) / 2.0 {
            "green"
        } else {
            "blue"
        };
        shade.push(Some(s.to_string()));
        cluster.push(Some(["c0", "c1"][k].to_string()));
    }
    RawTable::new(
        Schema {
            columns: vec![
                Column::numerical("x"),
                Column::numerical("y"),
                Column::categorical("shade", &["blue", "green", "red"]),
                Column::categorical("cluster", &["c0", "c1"]),
            ],
            target: "cluster".into(),
            task: Task::Binary,
        },
        vec![
            RawColumn::Numerical(x),
            RawColumn::Numerical(y),
            RawColumn::Categorical(shade),
            RawColumn::Categorical(cluster),
        ],
    )
    .expect("generator output matches schema")
}

/// Four blobs at `(+-1, +-1)`; the label is the XOR of the coordinate signs.
pub fn xor_blobs(n: usize, seed: u64) -> RawTable {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut label = Vec::with_capacity(n);
    for _ in 0..n {
        let sx = r.random_bool(0.5);
        let sy = r.random_bool(0.5);
        let cx = if sx { 1.0 } else { -1.0 };
        let cy = if sy { 1.0 } else { -1.0 };
        x.push(Some(cx + noise.sample(&mut r)));
        y.push(Some(cy + noise.sample(&mut r)));
        label.push(Some(if sx ^ sy { "one" } else { "zero" }.to_string()));
    }
    RawTable::new(
        Schema {
            columns: vec![
                Column::numerical("x"),
                Column::numerical("y"),
                Column::categorical("label", &["one", "zero"]),
            ],
            target: "label".into(),
            task: Task::Binary,
        },
        vec![
            RawColumn::Numerical(x),
            RawColumn::Numerical(y),
            RawColumn::Categorical(label),
        ],
    )
    .expect("generator output matches schema")
}

/// Three numerical and three categorical columns of random noise; the last
/// categorical column is the target.
pub fn mixed_six(n: usize, seed: u64) -> RawTable {
    let mut r = rng(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut num: Vec<Vec<Option<f64>>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    let mut cat: Vec<Vec<Option<String>>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    let sizes = [2usize, 3, 4];
    for _ in 0..n {
        for c in num.iter_mut() {
            c.push(Some(unit.sample(&mut r)));
        }
        for (c, &k) in cat.iter_mut().zip(&sizes) {
            c.push(Some(format!("v{}", r.random_range(0..k))));
        }
    }
    let cat_cols: Vec<Column> = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let labels: Vec<String> = (0..k).map(|j| format!("v{j}")).collect();
            let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
            Column::categorical(&format!("c{i}"), &refs)
        })
        .collect();
    let mut columns = vec![Column::numerical("n0"), Column::numerical("n1"), Column::numerical("n2")];
    columns.extend(cat_cols);
    let mut data: Vec<RawColumn> = num.into_iter().map(RawColumn::Numerical).collect();
    data.extend(cat.into_iter().map(RawColumn::Categorical));
    RawTable::new(
        Schema {
            columns,
            target: "c2".into(),
            task: Task::Multiclass,
        },
        data,
    )
    .expect("generator output matches schema")
}
