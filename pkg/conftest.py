import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "dolphin_platform.settings")
django.setup()
