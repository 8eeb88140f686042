//! Builds the provider-grouped synthetic federation, prints its shape and
//! round-trips it through JSONL.
//!
//! ```bash
//! cargo run -p pflkit --example synthetic_federation
//! ```

use std::io::BufReader;

use pflkit::fedsim::{generate_synthetic, min_group_count, SyntheticConfig};

fn main() -> pflkit::Result<()> {
    let cfg = SyntheticConfig { heterogeneity: 0.9, ..SyntheticConfig::default() };
    let ds = generate_synthetic(&cfg)?;
    println!(
        "{} clients, {} records, {} classes, feature dim {}",
        ds.n_clients(),
        ds.num_records(),
        ds.n_classes(),
        ds.feature_dim
    );
    println!("smallest client has {} providers", min_group_count(&ds));

    for c in ds.clients.iter().take(3) {
        let mut counts = vec![0usize; ds.n_classes()];
        c.records().for_each(|r| counts[r.answer_id] += 1);
        println!("client {}: {} providers, class counts {counts:?}", c.client_id, c.groups.len());
    }
    println!("answers look like {:?}", &ds.labels[..3]);

    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)?;
    let back = pflkit::fedsim::FederatedDataset::read_jsonl(BufReader::new(&buf[..]))?;
    assert_eq!(back, ds);
    println!("JSONL: {} bytes, round trip exact", buf.len());

    let competition = generate_synthetic(&SyntheticConfig { records_per_provider: pflkit::fedsim::RecordCount::Fixed(2), ..SyntheticConfig::competition_shape(0) })?;
    println!("competition shape: {} providers over {} clients", competition.clients.iter().map(|c| c.groups.len()).sum::<usize>(), competition.n_clients());
    Ok(())
}
