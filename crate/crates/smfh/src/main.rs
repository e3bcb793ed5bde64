fn main() {
    // SMFH_THREADS caps internal parallelism (ranking and evaluation).
    if let Ok(v) = std::env::var("SMFH_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    std::process::exit(smfh::cli::run(std::env::args_os()));
}
