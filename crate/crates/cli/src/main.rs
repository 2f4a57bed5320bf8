use clap::Parser;

fn main() {
    let cli = fbq_cli::Cli::parse();
    if let Err(e) = fbq_cli::run(cli) {
        eprintln!("fbq: {e}");
        std::process::exit(e.exit_code());
    }
}
