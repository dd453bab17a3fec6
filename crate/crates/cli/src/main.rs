use clap::Parser;

fn main() {
    let cli = shellrig::Cli::parse();
    std::process::exit(shellrig::run(&cli));
}
