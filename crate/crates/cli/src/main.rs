use clap::Parser;

fn main() {
    let cli = ecgsl_cli::Cli::parse();
    if let Err(e) = ecgsl_cli::run(&cli) {
        eprintln!("error[{}]: {e}", e.code());
        std::process::exit(1);
    }
}
