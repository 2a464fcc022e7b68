//! The CSV snapshots under `data/` must match the generators. Set
//! `TABGEN_REGEN_DATA=1` to rewrite them.

use std::fs;
use std::path::PathBuf;

use tabgen::dataio::{load_csv, Schema};
use tabgen::experiment::generate;

const BUNDLED: [(&str, usize); 3] = [("gaussian_mixture", 2000), ("xor_blobs", 1000), ("mixed_six", 500)];

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

#[test]
fn bundled_csvs_match_generators() {
    let regen = std::env::var_os("TABGEN_REGEN_DATA").is_some();
    let tmp = tempfile::tempdir().unwrap();
    for (name, rows) in BUNDLED {
        let table = generate(name, rows, 0).unwrap();
        let csv = data_dir().join(format!("{name}.csv"));
        let schema = data_dir().join(format!("{name}.schema.json"));
        if regen {
            fs::create_dir_all(data_dir()).unwrap();
            table.write_csv(&csv).unwrap();
            fs::write(&schema, serde_json::to_string_pretty(&table.schema).unwrap() + "\n").unwrap();
        }
        let fresh = tmp.path().join(format!("{name}.csv"));
        table.write_csv(&fresh).unwrap();
        assert_eq!(fs::read(&csv).unwrap(), fs::read(&fresh).unwrap(), "{name}.csv is stale");
        let stored: Schema = serde_json::from_str(&fs::read_to_string(&schema).unwrap()).unwrap();
        assert_eq!(stored, table.schema);
        assert_eq!(load_csv(&csv, &schema).unwrap().num_rows(), rows);
    }
}
