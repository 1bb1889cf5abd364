//! Queue lengths and sojourn times for the master and network queues, and
//! where each saturates.
//!
//! cargo run --example queueing_model

use odys::model::{
    estimate_response, service_time, weighted_arrival_rate, Component, ModelError, ModelParams,
};

fn main() -> Result<(), ModelError> {
    let mut p = ModelParams::five_node_reference();
    p.ns = 300;
    p.nh = 11;
    for c in Component::ALL {
        let per_unit = weighted_arrival_rate(c, 1.0, &p)?;
        println!(
            "{c:<18} ST {:.4} ms, saturates at {:.1} qps",
            service_time(c, &p)?,
            1000.0 / (per_unit * service_time(c, &p)?)
        );
    }
    println!("qps   cpu_ms  mem_ms  net_ms  master+net_ms");
    for qps in [5.0, 20.0, 40.0, 55.0, 62.0, 70.0] {
        match estimate_response(10, qps / 1000.0, &p, 0.0) {
            Ok(e) => println!(
                "{qps:<5} {:.4}  {:.4}  {:.4}  {:.4}",
                e.master_cpu, e.master_mem_bus, e.network, e.master_network
            ),
            Err(e) => println!("{qps:<5} {e}"),
        }
    }
    Ok(())
}
