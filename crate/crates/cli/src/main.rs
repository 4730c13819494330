use clap::Parser;
use completeness_cli::{run, Args};

fn main() {
    let args = Args::parse();
    if let Some(n) = std::env::var("COMPLETENESS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is set once");
    }
    let result = run(&args).and_then(|out| {
        out.write()?;
        Ok(out)
    });
    match result {
        Ok(out) => print!("{}", out.report.text),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
