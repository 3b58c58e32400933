"""
أمر إدارة ذاكرة الاستجابات
Inspect or clear the content-addressed response cache.
"""
from pathlib import Path

from django.core.management.base import BaseCommand

from core.utils import get_setting
from gateway.cache import ResponseCache


class Command(BaseCommand):
    help = 'Show statistics of the response cache or clear it'

    def add_arguments(self, parser):
        parser.add_argument('action', choices=['stats', 'clear'])
        parser.add_argument('--cache-dir', help='cache directory (default: MEDRANK_CACHE_DIR)')

    def handle(self, *args, **options):
        cache = ResponseCache(Path(options['cache_dir'] or get_setting('CACHE_DIR')))
        if options['action'] == 'clear':
            removed = cache.clear()
            self.stdout.write(self.style.SUCCESS(f"Removed {removed} cached responses from {cache.directory}"))
            return

        stats = cache.stats()
        self.stdout.write(f"directory: {stats['directory']}")
        self.stdout.write(f"entries: {stats['entries']}")
        self.stdout.write(f"bytes: {stats['bytes']}")
