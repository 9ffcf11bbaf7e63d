#!/usr/bin/env python3
"""
BHV Brownian Tool - runner script
Dependency checks, status, test suite and acceptance experiments.
"""

import sys
import os
import subprocess
import argparse
from datetime import datetime

PROJECT_FILES = [
    'main.py', 'config.py', 'streams.py', 'treespace.py', 'geodesic.py', 'kernels.py',
    'bridge.py', 'posterior.py', 'evidence.py', 'dataset.py', 'outputs.py', 'experiments.py',
]


def check_dependencies():
    """Check that the required packages are installed"""
    try:
        import numpy
        import scipy
        import networkx
        from dotenv import load_dotenv
        print("✅ All dependencies installed")
        return True
    except ImportError as e:
        print(f"❌ Missing dependency: {e}")
        print("Run: python run.py install")
        return False


def check_config():
    """Validate BHV_* environment settings (.env is optional)"""
    try:
        from config import Config
        Config.validate()
    except Exception as e:
        print(f"❌ {e}")
        return False
    if not os.path.exists('.env'):
        print("ℹ️  No .env file; using defaults")
    print(f"✅ Configuration OK (output dir {Config.OUTPUT_DIR}, seed {Config.SEED}, workers {Config.WORKERS})")
    return True


def run_subprocess(command, label):
    print(f"🚀 {label}... ({datetime.now().strftime('%Y-%m-%d %H:%M:%S')})")
    try:
        result = subprocess.run(command, capture_output=True, text=True, encoding='utf-8')

        print("📝 Output:")
        print(result.stdout)

        if result.stderr:
            print("⚠️  Errors:")
            print(result.stderr)

        if result.returncode == 0:
            print("✅ Done")
        else:
            print(f"❌ Failed (exit code {result.returncode})")
        return result.returncode

    except Exception as e:
        print(f"❌ Error: {str(e)}")
        return 1


def run_tests(extra):
    return run_subprocess([sys.executable, '-m', 'pytest', '-q'] + extra, "Running test suite")


def run_experiments(extra):
    return run_subprocess([sys.executable, 'experiments.py'] + extra, "Running acceptance experiments")


def show_status():
    """Show status information"""
    print("📊 BHV Brownian Tool status")
    print("=" * 40)

    print("📦 Dependencies:")
    check_dependencies()

    print("\n⚙️  Configuration:")
    check_config()

    print(f"\n📁 Project files:")
    for file in PROJECT_FILES:
        if os.path.exists(file):
            print(f"   ✅ {file}")
        else:
            print(f"   ❌ {file} (missing)")

    log_file = os.getenv('BHV_LOG_FILE', 'bhv_brownian.log')
    if os.path.exists(log_file):
        try:
            with open(log_file, 'r', encoding='utf-8') as f:
                lines = f.readlines()
                if lines:
                    print(f"\n📋 Recent log (last 5 lines):")
                    for line in lines[-5:]:
                        print(f"   {line.strip()}")
        except OSError:
            pass


def install_deps():
    """Install dependencies"""
    print("📦 Installing dependencies...")
    try:
        subprocess.run([sys.executable, '-m', 'pip', 'install', '-r', 'requirements.txt'],
                      check=True)
        print("✅ Dependencies installed")
    except subprocess.CalledProcessError:
        print("❌ Dependency installation failed")


def main():
    """Entry point"""
    parser = argparse.ArgumentParser(
        description="BHV Brownian Tool runner",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run.py install                  # install dependencies
  python run.py status                   # show status
  python run.py test                     # run the test suite
  python run.py experiments kernel4      # run one acceptance experiment
  python run.py yeast                    # yeast reproduction (hours; needs BHV_YEAST_DATA)
        """
    )

    parser.add_argument('command',
                       choices=['install', 'status', 'test', 'experiments', 'yeast'],
                       help='command to run')
    parser.add_argument('extra', nargs=argparse.REMAINDER, help='arguments passed through')

    if len(sys.argv) == 1:
        parser.print_help()
        return 0

    args = parser.parse_args()

    if args.command == 'install':
        install_deps()
    elif args.command == 'status':
        show_status()
    elif args.command == 'test':
        if check_dependencies():
            return run_tests(args.extra)
    elif args.command == 'experiments':
        if check_dependencies() and check_config():
            return run_experiments(args.extra or ['all'])
    elif args.command == 'yeast':
        if check_dependencies() and check_config():
            return run_experiments(['yeast'] + args.extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
