//! k-anonymize a small table with Mondrian partitioning.

use privsec::anonymize::{anonymize, verify_k_anonymity, QiKind, QiTable, Table};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [
        ("25", "13053", "M", "flu"),
        ("28", "13068", "F", "cancer"),
        ("31", "13068", "M", "flu"),
        ("36", "14853", "F", "gastritis"),
        ("41", "14850", "M", "cancer"),
        ("47", "14853", "F", "flu"),
        ("52", "13053", "M", "heart"),
        ("58", "13068", "F", "heart"),
    ];
    let table = Table::new(
        ["age", "zip", "sex", "disease"].map(String::from).to_vec(),
        rows.iter()
            .map(|r| vec![r.0.into(), r.1.into(), r.2.into(), r.3.into()])
            .collect(),
    )?;
    let qi = QiTable::new(
        table,
        &[
            ("age", QiKind::Numeric),
            ("zip", QiKind::Numeric),
            ("sex", QiKind::Categorical),
        ],
        &["disease"],
    )?;
    let anon = anonymize(&qi, 3)?;
    println!("{}", anon.table.headers.join(","));
    for r in &anon.table.rows {
        println!("{}", r.join(","));
    }
    println!("3-anonymous: {}", verify_k_anonymity(&anon, 3));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
